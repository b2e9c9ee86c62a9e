"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--particles 100000] [--json out.json]

Each kernel is called directly on both backends with identical arguments;
the table reports the best wall time over ``--repeat`` runs.
"""
import argparse
import json
import platform
import time

import numpy as np

from fellerkit.geometry import EUCLIDEAN
from fellerkit.kernels import backends
from fellerkit.measure import _METRIC_CODES
from fellerkit.system import AffineMap, DiscreteIFS, FlowSpec, JumpFlowSystem, ProbabilityField


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def step_args(system, n, rng):
    X = rng.uniform(-1, 1, size=(n, system.dim))
    traj = np.arange(n, dtype=np.uint64)
    A, b, pk, cum, theta, offs = system._packed()
    lam, gamma, has_flow = system._flow()
    return (X, traj, 3, 12345, A, b, pk, cum, theta, offs, lam, float(gamma), has_flow)


def workloads(n, rng):
    halving = DiscreteIFS([AffineMap.scalar(0.5), AffineMap.scalar(0.5, 0.5)],
                          ProbabilityField.constant([0.5, 0.5]))
    maps3 = [AffineMap(rng.normal(size=(3, 3)) * 0.3, rng.normal(size=3)) for _ in range(4)]
    softmax = DiscreteIFS(maps3, ProbabilityField.softmax(rng.normal(size=(4, 3))))
    jump = JumpFlowSystem(FlowSpec((0.2,)), 1.0, halving.maps, halving.probs)
    traj = np.arange(10 * n, dtype=np.uint64)
    pts = np.sort(rng.uniform(0, 1, size=(n, 1)), axis=0)
    order = np.arange(n, dtype=np.int64)
    code = _METRIC_CODES[EUCLIDEAN.kind]
    return {
        f"keyed_uniforms ({10 * n} draws)": lambda k: k.keyed_uniforms(7, traj, 11, 0),
        f"particle_step halving d=1 ({n})": (lambda a: lambda k: k.particle_step(*a))(step_args(halving, n, rng)),
        f"particle_step softmax d=3 ({n})": (lambda a: lambda k: k.particle_step(*a))(step_args(softmax, n, rng)),
        f"particle_step jump-flow ({n})": (lambda a: lambda k: k.particle_step(*a))(step_args(jump, n, rng)),
        f"greedy_merge r=1e-4 ({n})": lambda k: k.greedy_merge(pts, order, 1e-4, 1e-4, code, 0.0),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--particles", type=int, default=100_000)
    parser.add_argument("--json", default=None, metavar="PATH")
    args = parser.parse_args(argv)
    mods = backends()
    rng = np.random.default_rng(0)
    rows = []
    for name, call in workloads(args.particles, rng).items():
        row = {"kernel": name}
        for bname, mod in mods.items():
            call(mod)  # warm-up
            row[bname] = best_of(lambda: call(mod), args.repeat)
        if "cython" in row:
            row["speedup"] = row["python"] / row["cython"]
        rows.append(row)
    width = max(len(r["kernel"]) for r in rows)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{b:>10}" for b in mods) + ("     speedup" if "cython" in mods else "")
    print(header)
    for r in rows:
        line = f"{r['kernel']:<{width}}  " + "  ".join(f"{r[b] * 1e3:>8.2f}ms" for b in mods)
        if "speedup" in r:
            line += f"  {r['speedup']:>9.1f}x"
        print(line)
    if "cython" not in mods:
        print("compiled extension not built; only the fallback was timed")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"python": platform.python_version(), "numpy": np.__version__, "repeat": args.repeat,
                       "rows": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
