"""Evolution of measures under P*^n, Cesaro averages and their chain counterparts."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ResourceError
from .geometry import as_point
from .measure import FiniteMeasure, mixture, prune
from .rng import check_seed, uniforms
from .system import DUAL_STEP_CAP, DiscreteIFS, ExactChain, dual_step_exact

INIT_SLOT = 7


@dataclass(frozen=True)
class PrunePolicy:
    mass_floor: float = 1e-12
    merge_radius: float = 0.0
    budget: float = 1e-9
    enabled: bool = True

    def to_dict(self):
        return {"mass_floor": self.mass_floor, "merge_radius": self.merge_radius,
                "budget": self.budget, "enabled": self.enabled}


NO_PRUNE = PrunePolicy(enabled=False)


@dataclass
class EvolutionTrace:
    measures: list
    prune_loss: list
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.measures)

    def __getitem__(self, k):
        return self.measures[k]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "metadata": self.metadata,
            "prune_loss": list(self.prune_loss),
            "measures": [m.to_dict() for m in self.measures],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        d = self.measures[0].dim
        writer.writerow(["step"] + [f"x_{i + 1}" for i in range(d)] + ["weight"])
        for k, m in enumerate(self.measures):
            for p, w in m:
                writer.writerow([k] + [repr(float(c)) for c in p] + [repr(w)])
        return buf.getvalue()


def config_hash(system) -> str:
    payload = json.dumps(system.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


# -- exact evolution ------------------------------------------------------------

def evolve_exact(ifs: DiscreteIFS, m0: FiniteMeasure, steps: int, prune_policy: PrunePolicy = PrunePolicy(),
                 *, cap: int = DUAL_STEP_CAP, keep: str = "all") -> EvolutionTrace:
    """Iterate the exact dual step; ``keep='last'`` retains only the final measure."""
    if steps < 0:
        raise InputError("steps must be >= 0")
    measures = [m0]
    losses = [0.0]
    current, lost = m0, 0.0
    for k in range(1, steps + 1):
        try:
            current = dual_step_exact(ifs, current, cap=cap)
        except ResourceError as exc:
            raise ResourceError(f"support explosion at step {k}: {exc}") from exc
        if prune_policy.enabled and (prune_policy.mass_floor > 0 or prune_policy.merge_radius > 0):
            res = prune(current, prune_policy.mass_floor, prune_policy.merge_radius, ifs.metric)
            current = res.measure
            lost += res.dropped_mass
            if lost > prune_policy.budget:
                raise ResourceError(f"pruning dropped {lost:.3e} mass by step {k}, budget {prune_policy.budget:.1e}")
        if keep == "all":
            measures.append(current)
            losses.append(lost)
    if keep != "all":
        measures, losses = [current], [lost]
    meta = {"mode": "exact", "steps": steps, "prune": prune_policy.to_dict(), "system": config_hash(ifs)}
    return EvolutionTrace(measures, losses, None, meta)


# -- particle evolution -----------------------------------------------------------

def initial_positions(x0, particles: int, seed: int, dim: int) -> np.ndarray:
    """Starting particle cloud: copies of a point, or keyed draws from a finite measure."""
    if isinstance(x0, FiniteMeasure):
        if x0.dim != dim:
            raise InputError("initial measure dimension does not match the system")
        u = uniforms(seed, np.arange(particles, dtype=np.uint64), 0, INIT_SLOT)
        cum = np.cumsum(x0.weights)
        cum[-1] = 1.0
        idx = np.minimum(np.searchsorted(cum, u, side="right"), x0.size - 1)
        return np.ascontiguousarray(x0.points[idx])
    x = as_point(x0, dim)
    return np.ascontiguousarray(np.broadcast_to(x, (particles, dim)))


def _chunks(n: int, workers: int):
    bounds = np.linspace(0, n, max(1, workers) + 1).astype(int)
    return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def run_particles(system, X0: np.ndarray, steps: int, seed: int, *, workers: int = 1, traj_offset: int = 0,
                  observer=None, start_step: int = 0, traj=None) -> np.ndarray:
    """Advance a particle cloud ``steps`` times; ``observer(k, X)`` sees every state k >= 1.

    Row ``j`` uses key (seed, traj_offset + j, step), or (seed, traj[j], step)
    when explicit ids are given (repeated ids give common random numbers).
    Chunking across workers therefore cannot change any path.
    """
    seed = check_seed(seed)
    X = np.ascontiguousarray(X0, dtype=float)
    n = X.shape[0]
    if traj is None:
        traj = np.arange(traj_offset, traj_offset + n, dtype=np.uint64)
    else:
        traj = np.ascontiguousarray(traj, dtype=np.uint64)
        if traj.shape != (n,):
            raise InputError("need one trajectory id per particle")
    parts = _chunks(n, workers)
    pool = ThreadPoolExecutor(max_workers=len(parts)) if len(parts) > 1 else None
    try:
        for k in range(steps):
            step = start_step + k
            if pool is None:
                X = system.advance(X, traj, step, seed)
            else:
                futures = [pool.submit(system.advance, X[a:b], traj[a:b], step, seed) for a, b in parts]
                X = np.vstack([f.result() for f in futures])
            if observer is not None:
                observer(step + 1, X)
    finally:
        if pool is not None:
            pool.shutdown()
    return X


def empirical_measure(X: np.ndarray) -> FiniteMeasure:
    n = X.shape[0]
    return FiniteMeasure._trusted(X, np.full(n, 1.0 / n))


def evolve_particles(system, x0, steps: int, particles: int, seed: int, *, workers: int = 1,
                     record_every: int = 1) -> EvolutionTrace:
    if particles < 1:
        raise InputError("particle count must be >= 1")
    if steps < 0:
        raise InputError("steps must be >= 0")
    X0 = initial_positions(x0, particles, seed, system.dim)
    measures = [empirical_measure(X0)]
    recorded = [0]

    def observe(k, X):
        if k % record_every == 0 or k == steps:
            measures.append(empirical_measure(X))
            recorded.append(k)

    run_particles(system, X0, steps, seed, workers=workers, observer=observe)
    meta = {"mode": "particles", "steps": steps, "particles": particles, "recorded_steps": recorded,
            "system": config_hash(system)}
    return EvolutionTrace(measures, [0.0] * len(measures), seed, meta)


# -- Cesaro averages --------------------------------------------------------------

def cesaro_average(measures) -> FiniteMeasure:
    """(1/n) sum of the given measures, i.e. Q_n mu when passed trace[1..n]."""
    measures = list(measures)
    if not measures:
        raise InputError("Cesaro average of an empty slice")
    n = len(measures)
    return mixture([(1.0 / n, m) for m in measures])


def cesaro_matrix(chain: ExactChain, t: int) -> np.ndarray:
    """(1/t) sum_{k=1}^t P^k."""
    if t < 1:
        raise InputError("Cesaro time must be >= 1")
    P = chain.P
    acc = np.zeros_like(P)
    Pk = np.eye(chain.n)
    for _ in range(t):
        Pk = Pk @ P
        acc += Pk
    return acc / t


def cesaro_vector(chain: ExactChain, dist, n: int) -> np.ndarray:
    """Q_n dist = (1/n) sum_{k=1}^n dist P^k by vector iteration."""
    if n < 1:
        raise InputError("Cesaro time must be >= 1")
    v = np.asarray(dist, dtype=float)
    acc = np.zeros_like(v)
    for _ in range(n):
        v = v @ chain.P
        acc += v
    return acc / n


def cesaro_tv_residual(chain: ExactChain, z: int, n: int) -> float:
    """|| P* Q_n delta_z - Q_n delta_z ||_TV, at most 2/n by telescoping.

    Evaluated in the telescoped form (1/n) ||delta_z P^{n+1} - delta_z P||_TV,
    with the TV of two probability vectors written as 2 (1 - sum min(a, b)) so
    that rounding can never push the value past 2/n.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    b = chain.P[int(z)].copy()
    a = b
    for _ in range(n):
        a = a @ chain.P
    overlap = math.fsum(np.minimum(a, b))
    return 2.0 * max(0.0, 1.0 - overlap) / n


def composed_cesaro(chain: ExactChain, dist, times, T: int | None = None) -> np.ndarray:
    """Q_T Q_{t_k} ... Q_{t_1} dist (Q_T omitted when ``T`` is None)."""
    v = np.asarray(dist, dtype=float)
    for t in times:
        if t < 1:
            raise InputError("all Cesaro times must be >= 1")
        v = cesaro_vector(chain, v, int(t))
    if T is not None:
        v = cesaro_vector(chain, v, int(T))
    return v


def composed_cesaro_gap(chain: ExactChain, times, T: int) -> float:
    """max over starting states of || Q_{T, t_k..t_1} delta_x - Q_T delta_x ||_TV.

    TV distance of two linear images is convex in the starting law, so the
    supremum over all probability vectors is attained at a vertex.
    """
    QT = cesaro_matrix(chain, int(T))
    M = np.eye(chain.n)
    for t in times:
        M = M @ cesaro_matrix(chain, int(t))
    G = M @ QT - QT
    return float(np.max(np.abs(G).sum(axis=1)))
