"""Command-line experiment runner.

Exit codes: 0 every check terminated, 2 config error (field path on stderr),
3 resource cap (check named on stderr).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__, kernels
from .config import (dictionary_from_config, json_path, load_config, measure_from_config,
                     system_from_config)
from .coupling import (chain_decomposition, coupling_bound_check, lemma_threshold, select_times, sigma_schedule,
                       telescoping_decomposition)
from .criteria import (REFUTED, SUPPORTED, _jsonable, cauchy_diagnostic, e_property_probe,
                       invariant_residual, lower_bound_mass_estimate, stability_lower_bound_estimate,
                       uniform_compact_convergence)
from .errors import ConfigError, DegenerateError, InadmissibleSplitError, InputError, NumericError, ResourceError
from .measure import FiniteMeasure, default_dictionary, dirac, prune
from .rng import check_seed
from .semigroup import (PrunePolicy, cesaro_average, cesaro_tv_residual, composed_cesaro_gap, evolve_exact,
                        evolve_particles)
from .system import (DiscreteIFS, ExactChain, JumpFlowSystem, check_avg_contraction, check_flow_expansion,
                     check_prob_lipschitz, check_spectral_gap_condition, chain_stationary)
from .transport import fm_distance

REPORT_SCHEMA_VERSION = "fellerkit-report/1"
EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE = 0, 2, 3

SUBCOMMANDS = {
    "run": None,
    "simulate": ("simulate",),
    "estimate-invariant": ("estimate_invariant",),
    "check-conditions": ("conditions",),
    "check-criteria": ("lower_bound", "stability", "e_property", "cauchy", "invariant_residual",
                       "uniform_convergence"),
    "couple-verify": ("couple_verify",),
    "oracle-chain": ("oracle_chain",),
}


class CheckContext:
    def __init__(self, system, seed, workers, path):
        self.system = system
        self.seed = seed
        self.workers = workers
        self.path = path

    def need(self, params, key):
        if key not in params:
            raise ConfigError(f"missing parameter {key!r}", f"{self.path}.params")
        return params[key]

    def require(self, *types):
        if not isinstance(self.system, types):
            names = "/".join(t.kind for t in types)
            raise ConfigError(f"this check needs a {names} system", f"{self.path}.kind")

    def dictionary(self, params, points):
        if "dictionary" in params:
            return dictionary_from_config(params["dictionary"], self.system.metric, f"{self.path}.params.dictionary")
        if isinstance(self.system, ExactChain):
            return np.eye(self.system.n)
        return default_dictionary(np.atleast_2d(np.asarray(points, dtype=float)), self.system.metric)

    def measure(self, params, key):
        return measure_from_config(self.need(params, key), f"{self.path}.params.{key}")


def _start(value, system):
    if isinstance(value, dict):
        return measure_from_config(value, "$.params")
    return value


# -- check runners ------------------------------------------------------------------------

def norm_quantile(m: FiniteMeasure, q: float) -> float:
    """Weighted q-quantile of the atom norms."""
    norms = np.linalg.norm(m.points, axis=1)
    order = np.argsort(norms, kind="stable")
    cum = np.cumsum(m.weights[order])
    return float(norms[order][min(int(np.searchsorted(cum, q * cum[-1])), m.size - 1)])


def run_simulate(ctx: CheckContext, p: dict) -> dict:
    ctx.require(DiscreteIFS, JumpFlowSystem)
    steps = int(p.get("steps", 20))
    mode = p.get("mode", "particles")
    x0 = _start(p.get("x0", [0.0] * ctx.system.dim), ctx.system)
    if mode == "exact":
        ctx.require(DiscreteIFS)
        m0 = x0 if isinstance(x0, FiniteMeasure) else dirac(x0)
        policy = PrunePolicy(**p.get("prune", {}))
        trace = evolve_exact(ctx.system, m0, steps, policy, keep="last")
    else:
        trace = evolve_particles(ctx.system, x0, steps, int(p.get("particles", 1000)), ctx.seed,
                                 workers=ctx.workers, record_every=int(p.get("record_every", steps or 1)))
    final = trace.measures[-1]
    return {"verdict": None, "mode": mode, "steps": steps, "final_mean": final.mean().tolist(),
            "final_support": final.size, "norm_p99": norm_quantile(final, 0.99), "prune_loss": trace.prune_loss[-1], "trace_metadata": trace.metadata,
            "final_measure": final.to_dict() if final.size <= int(p.get("max_atoms_in_report", 256)) else None}


def run_estimate_invariant(ctx: CheckContext, p: dict) -> dict:
    ctx.require(DiscreteIFS, JumpFlowSystem)
    steps = int(p.get("steps", 12))
    mode = p.get("mode", "exact" if isinstance(ctx.system, DiscreteIFS) else "particles")
    x0 = p.get("x0", [0.0] * ctx.system.dim)
    merge = float(p.get("merge_radius", 2.0 ** -12))
    if mode == "exact":
        ctx.require(DiscreteIFS)
        trace = evolve_exact(ctx.system, dirac(x0), steps, PrunePolicy(**p.get("prune", {})))
        est = cesaro_average(trace.measures[1:])
    else:
        trace = evolve_particles(ctx.system, x0, steps, int(p.get("particles", 10000)), ctx.seed,
                                 workers=ctx.workers, record_every=steps)
        est = trace.measures[-1]
    est = prune(est, 0.0, merge, ctx.system.metric).measure
    out = {"verdict": None, "mode": mode, "steps": steps, "mean": est.mean().tolist(), "support": est.size}
    if isinstance(ctx.system, DiscreteIFS) and est.size * ctx.system.N <= 5000:
        out["invariant_residual"] = invariant_residual(ctx.system, est)
    if "oracle" in p:
        oracle = ctx.measure(p, "oracle")
        out["fm_to_oracle"] = fm_distance(est, oracle, ctx.system.metric).value
    return out


def run_conditions(ctx: CheckContext, p: dict) -> dict:
    ctx.require(DiscreteIFS, JumpFlowSystem)
    rng = np.random.default_rng(ctx.seed)
    n = int(p.get("pairs", 2000))
    box = float(p.get("box", 10.0))
    out = {"average_contraction": check_avg_contraction(ctx.system, n, rng, box),
           "probability_lipschitz": check_prob_lipschitz(ctx.system, n, rng, box)}
    r = out["average_contraction"]["r"]
    if isinstance(ctx.system, JumpFlowSystem):
        out["flow_expansion"] = check_flow_expansion(ctx.system.flow, n, rng, ctx.system.metric, box)
        out["spectral"] = check_spectral_gap_condition(r, ctx.system.flow.kappa, ctx.system.gamma)
        passed = out["spectral"]["pass"]
    else:
        passed = out["average_contraction"]["contractive"]
    out["verdict"] = SUPPORTED if passed else "inconclusive"
    return out


def _criterion(report) -> dict:
    return report.to_dict()


def _ball_params(ctx, p):
    if isinstance(ctx.system, ExactChain) and "ball_states" in p:
        return p.get("z"), p.get("eps")
    return ctx.need(p, "z"), float(ctx.need(p, "eps"))


def run_lower_bound(ctx, p):
    z, eps = _ball_params(ctx, p)
    starts = p.get("starts", [[0.0] * getattr(ctx.system, "dim", 1)] if not isinstance(ctx.system, ExactChain) else [0])
    return _criterion(lower_bound_mass_estimate(
        ctx.system, z, eps, [_start(s, ctx.system) for s in starts], int(p.get("horizon", 200)),
        int(p.get("window", 100)), particles=int(p.get("particles", 1000)), seed=ctx.seed, workers=ctx.workers,
        ball_states=p.get("ball_states"), eps_grid=p.get("eps_grid")))


def run_stability(ctx, p):
    z, eps = _ball_params(ctx, p)
    return _criterion(stability_lower_bound_estimate(
        ctx.system, z, eps, ctx.need(p, "grid"), int(p.get("horizon", 200)), p.get("window"),
        particles=int(p.get("particles", 1000)), seed=ctx.seed, workers=ctx.workers,
        ball_states=p.get("ball_states"), eps_grid=p.get("eps_grid")))


def run_e_property(ctx, p):
    x = ctx.need(p, "x")
    radii = ctx.need(p, "radii")
    pts = [np.asarray(x, dtype=float), np.asarray(x, dtype=float) + max(radii)]
    return _criterion(e_property_probe(
        ctx.system, ctx.dictionary(p, pts), x, radii, int(p.get("horizon", 12)),
        particles=int(p.get("particles", 1000)), seed=ctx.seed, mode=p.get("mode", "sampler"),
        workers=ctx.workers, merge_radius=float(p.get("merge_radius", 0.0))))


def run_cauchy(ctx, p):
    z = ctx.need(p, "z")
    pts = [[0.0], [1.0]] if isinstance(ctx.system, ExactChain) else [np.asarray(z, float) - 1, np.asarray(z, float) + 1]
    return _criterion(cauchy_diagnostic(
        ctx.system, z, ctx.dictionary(p, pts), ctx.need(p, "n_grid"), mode=p.get("mode", "exact"),
        seed=ctx.seed, particles=int(p.get("particles", 1000)), workers=ctx.workers,
        prune_above=int(p.get("prune_above", 64)), merge_radius=float(p.get("merge_radius", 2.0 ** -12))))


def run_invariant_residual(ctx, p):
    ctx.require(DiscreteIFS)
    value = invariant_residual(ctx.system, ctx.measure(p, "candidate"))
    tol = p.get("tol")
    verdict = None if tol is None else (SUPPORTED if value <= tol else "inconclusive")
    return {"name": "invariant_residual", "verdict": verdict, "estimates": {"residual": value},
            "parameters": {"tol": tol}}


def run_uniform(ctx, p):
    K = ctx.need(p, "compact")
    if isinstance(ctx.system, ExactChain):
        mu = p.get("mu_star")
        mu = chain_stationary(ctx.system) if mu is None else np.asarray(mu, dtype=float)
        pts = None
    else:
        mu = ctx.measure(p, "mu_star")
        pts = K
    return _criterion(uniform_compact_convergence(
        ctx.system, ctx.dictionary(p, pts), K, mu, int(p.get("horizon", 16)), mode=p.get("mode", "exact"),
        seed=ctx.seed, particles=int(p.get("particles", 1000)), workers=ctx.workers, tol=float(p.get("tol", 1e-2))))


def _dist(chain, value, path):
    if isinstance(value, int):
        v = np.zeros(chain.n)
        v[value] = 1.0
        return v
    v = np.asarray(value, dtype=float)
    if v.shape != (chain.n,):
        raise ConfigError(f"expected a state index or a length-{chain.n} vector", path)
    return v


def run_couple_verify(ctx: CheckContext, p: dict) -> dict:
    ctx.require(ExactChain)
    chain = ctx.system
    ball = ctx.need(p, "ball_states")
    alpha = float(p.get("alpha", 0.5))
    mu1 = _dist(chain, p.get("mu1", 0), f"{ctx.path}.params.mu1")
    mu2 = _dist(chain, p.get("mu2", chain.n - 1), f"{ctx.path}.params.mu2")
    K = int(p.get("K", 3))
    eps = float(p.get("eps", lemma_threshold(alpha, K) / 2))
    times = p.get("times")
    if times is None:
        times = select_times(chain, K, float(p.get("threshold", 1e-3)), int(p.get("t0", 8)))
    out = {"alpha": alpha, "eps": eps, "times": times}
    try:
        cert = chain_decomposition(chain, mu1, ball, sigma_schedule(alpha, eps, len(times)), times)
        t1, t2 = telescoping_decomposition(chain, mu1, mu2, alpha, times, ball)
        D = ctx.dictionary(p, None)
        bound = coupling_bound_check(chain, mu1, mu2, alpha, times, D, ball)
    except InadmissibleSplitError as exc:
        out.update({"verdict": REFUTED, "failure": exc.to_dict()})
        return out
    ok = (cert.reconstruction_residual <= 1e-12 and max(t1.reconstruction_residual, t2.reconstruction_residual) <= 1e-12
          and abs(cert.coefficient_sum - 1) <= 1e-12 and bound["pass"])
    out.update({"verdict": SUPPORTED if ok else REFUTED, "chain_decomposition": cert.to_dict(),
                "telescoping_residuals": [t1.reconstruction_residual, t2.reconstruction_residual],
                "coupling_bound": bound})
    return out


def run_oracle_chain(ctx: CheckContext, p: dict) -> dict:
    ctx.require(ExactChain)
    chain = ctx.system
    pi = chain_stationary(chain)
    out = {"stationary": pi.tolist(), "stationary_residual": float(np.abs(pi @ chain.P - pi).sum())}
    ns = [int(n) for n in p.get("n_list", [10, 100, 1000])]
    rows = []
    ok = True
    for z in range(chain.n):
        for n in ns:
            r = cesaro_tv_residual(chain, z, n)
            ok &= r <= 2.0 / n
            rows.append({"z": z, "n": n, "residual": r, "bound": 2.0 / n})
    out["cesaro_tv"] = rows
    times = p.get("times", [3, 5])
    gaps = {str(T): composed_cesaro_gap(chain, times, int(T)) for T in p.get("T_list", [100, 1000])}
    out["composed_gap"] = {"times": times, "gaps": gaps}
    out["verdict"] = SUPPORTED if ok and out["stationary_residual"] <= 1e-12 else REFUTED
    return out


RUNNERS = {
    "simulate": run_simulate,
    "estimate_invariant": run_estimate_invariant,
    "conditions": run_conditions,
    "lower_bound": run_lower_bound,
    "stability": run_stability,
    "e_property": run_e_property,
    "cauchy": run_cauchy,
    "invariant_residual": run_invariant_residual,
    "uniform_convergence": run_uniform,
    "couple_verify": run_couple_verify,
    "oracle_chain": run_oracle_chain,
}


# -- report assembly ------------------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def determinism_hash(report: dict) -> str:
    payload = {k: v for k, v in report.items() if k not in ("metadata", "determinism_hash")}
    return hashlib.sha256(_canonical(payload).encode()).hexdigest()


def run_experiment(config: dict, *, kinds=None, seed=None, workers=None) -> dict:
    """Execute the config's checks (optionally only ``kinds``) and assemble the report.

    A subcommand whose kind has no entry in the config runs once with default parameters.
    """
    seed = check_seed(config["seed"] if seed is None else seed)
    workers = int(workers or config.get("workers", 1))
    system = system_from_config(config["system"])
    checks = [(i, c) for i, c in enumerate(config.get("checks", []))]
    if kinds is not None:
        selected = [(i, c) for i, c in checks if c["kind"] in kinds]
        if not selected:
            selected = [(None, {"kind": k, "params": {}}) for k in kinds[:1]]
        checks = selected
    results, timing = [], {}
    started = datetime.now(timezone.utc).isoformat()
    names = set()
    for i, check in checks:
        kind = check["kind"]
        name = check.get("name", kind if i is None else f"{kind}#{i}")
        if name in names:
            raise ConfigError(f"duplicate check name {name!r}", json_path(["checks", i, "name"]))
        names.add(name)
        path = "$.checks" if i is None else json_path(["checks", i])
        ctx = CheckContext(system, seed, workers, path)
        t0 = time.perf_counter()
        try:
            body = RUNNERS[kind](ctx, check.get("params", {}))
            status = "completed"
        except ResourceError as exc:
            raise ResourceError(f"check {name!r}: {exc}") from exc
        except ConfigError:
            raise
        except InputError as exc:
            raise ConfigError(str(exc), path + ".params") from exc
        except (NumericError, DegenerateError) as exc:
            body = {"verdict": "inconclusive", "error": type(exc).__name__, "message": str(exc)}
            status = "failed"
        timing[name] = time.perf_counter() - t0
        results.append({"name": name, "kind": kind, "status": status, "verdict": body.get("verdict"),
                        "result": _jsonable(body)})
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "toolkit_version": __version__,
        "config": config,
        "config_hash": hashlib.sha256(_canonical(config).encode()).hexdigest()[:16],
        "seed": seed,
        "checks": results,
    }
    report["determinism_hash"] = determinism_hash(report)
    report["metadata"] = {"started": started, "finished": datetime.now(timezone.utc).isoformat(),
                          "wall_clock_s": timing, "workers": workers, "backend": kernels.BACKEND}
    return report


def _flatten(prefix, value, rows):
    if isinstance(value, dict):
        for k in sorted(value):
            _flatten(f"{prefix}.{k}" if prefix else str(k), value[k], rows)
    elif isinstance(value, list):
        for j, v in enumerate(value):
            _flatten(f"{prefix}[{j}]", v, rows)
    else:
        rows.append((prefix, value))


def report_to_csv(report: dict) -> str:
    """One row per scalar leaf: check, verdict, field path, value."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["check", "kind", "verdict", "field", "value"])
    for entry in report["checks"]:
        rows = []
        _flatten("", entry["result"], rows)
        for field, value in rows:
            if isinstance(value, float) and math.isfinite(value):
                value = repr(value)
            writer.writerow([entry["name"], entry["kind"], entry["verdict"], field, value])
    writer.writerow(["#", "", "", "determinism_hash", report["determinism_hash"]])
    return buf.getvalue()


def render(report: dict, fmt: str) -> str:
    if fmt == "csv":
        return report_to_csv(report)
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fellerkit", description="Simulate and verify Markov-Feller systems.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, metavar="PATH")
        sp.add_argument("--seed", type=int, default=None, metavar="U64", help="overrides the config seed")
        sp.add_argument("--out", default=None, metavar="PATH")
        sp.add_argument("--format", choices=("json", "csv"), default=None)
        sp.add_argument("--workers", type=int, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        config = load_config(args.config)
        if args.seed is not None:
            check_seed(args.seed)
        report = run_experiment(config, kinds=SUBCOMMANDS[args.command], seed=args.seed, workers=args.workers)
    except (ConfigError, InputError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    output = config.get("output", {})
    fmt = args.format or output.get("format", "json")
    path = args.out or output.get("path")
    text = render(report, fmt)
    if path and path != "-":
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
