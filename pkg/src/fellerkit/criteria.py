"""Finite-horizon estimators for lower-bound, stability, equicontinuity and convergence criteria.

Verdicts follow one asymmetry: only exact computations (chain linear algebra,
structural arguments, escape certificates) may refute.  Monte Carlo evidence
yields ``supported`` or ``inconclusive``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components

from .errors import InputError
from .geometry import Ball, as_point
from .measure import FiniteMeasure, dirac, integrate, prune
from .semigroup import config_hash, initial_positions, run_particles
from .system import DiscreteIFS, ExactChain, dual_step_exact
from .transport import fm_distance

SUPPORTED = "supported"
REFUTED = "refuted"
INCONCLUSIVE = "inconclusive"

GRID_CAVEAT = "inf over a start grid approximates inf over the state space only on the explored region"
EXACT_TOL = 1e-12


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if hasattr(value, "to_dict"):
        return _jsonable(value.to_dict())
    return value


@dataclass
class CriterionReport:
    name: str
    estimates: dict
    verdict: str
    parameters: dict
    caveats: list = field(default_factory=list)

    def __post_init__(self):
        if self.verdict not in (SUPPORTED, REFUTED, INCONCLUSIVE):
            raise InputError(f"unknown verdict {self.verdict!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "verdict": self.verdict,
            "estimates": _jsonable(self.estimates),
            "parameters": _jsonable(self.parameters),
            "caveats": list(self.caveats),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# -- chain structure ----------------------------------------------------------------

def _chain_mask(chain: ExactChain, z, eps, ball_states) -> np.ndarray:
    mask = np.zeros(chain.n, dtype=bool)
    if ball_states is not None:
        idx = np.asarray(list(ball_states), dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= chain.n):
            raise InputError("ball_states index out of range")
        mask[idx] = True
    else:
        mask[chain.states_in_ball(Ball(z, eps))] = True
    return mask


def _closed_classes(chain: ExactChain) -> np.ndarray:
    """Boolean mask of recurrent states (members of closed communicating classes)."""
    adj = chain.P > 0
    ncomp, labels = connected_components(adj, directed=True, connection="strong")
    closed = np.ones(ncomp, dtype=bool)
    src, dst = np.nonzero(adj)
    leaving = labels[src] != labels[dst]
    closed[labels[src[leaving]]] = False
    return closed[labels]


def _support_cycle(chain: ExactChain, x: int, cap: int = 100_000):
    """Eventually periodic supports of delta_x P^n, n >= 1: (preperiod list, cycle list)."""
    adj = (chain.P > 0).astype(np.int64)
    s = np.zeros(chain.n, dtype=np.int64)
    s[x] = 1
    seen = {}
    seq = []
    for n in range(cap):
        s = ((s @ adj) > 0).astype(np.int64)
        key = s.tobytes()
        if key in seen:
            start = seen[key]
            return seq[:start], seq[start:]
        seen[key] = n
        seq.append(s.astype(bool))
    raise InputError("support sequence did not become periodic within the search cap")


def _chain_limit_profile(chain: ExactChain, x: int, mask: np.ndarray) -> dict:
    """Exact limiting per-phase ball masses of delta_x P^n.

    Mass on transient states vanishes; a recurrent state carries positive
    limiting mass in a phase exactly when it lies in that phase's eventual
    support.  Phase values come from the converged power of P^period.
    """
    pre, cycle = _support_cycle(chain, x)
    period = len(cycle)
    recurrent = _closed_classes(chain)
    zero_phase = np.array([not np.any(s & recurrent & mask) for s in cycle])
    M = np.linalg.matrix_power(chain.P, period)
    for _ in range(64):
        M2 = M @ M
        # squaring doubles any row-sum drift, so keep the rows stochastic
        M2 /= M2.sum(axis=1, keepdims=True)
        done = np.max(np.abs(M2 - M)) <= 1e-15
        M = M2
        if done:
            break
    v = M[x].copy()
    # align phases with the support cycle: cycle[0] corresponds to the first n in the periodic part
    offset = len(pre) + 1
    shift = offset % period
    limits = []
    w = v.copy()
    for _ in range(shift):
        w = w @ chain.P
    for r in range(period):
        limits.append(0.0 if zero_phase[r] else float(w[mask].sum()))
        w = w @ chain.P
    limits = np.array(limits)
    return {"period": period, "phase_limits": limits, "liminf": float(limits.min()),
            "cesaro_limit": float(limits.mean()), "structurally_zero": bool(zero_phase.any()),
            "cesaro_zero": bool(zero_phase.all())}


def _chain_ball_masses(chain: ExactChain, x: int, mask: np.ndarray, horizon: int) -> np.ndarray:
    v = np.zeros(chain.n)
    v[int(x)] = 1.0
    out = np.empty(horizon)
    for i in range(horizon):
        v = v @ chain.P
        out[i] = math.fsum(v[mask])
    return out


# -- escape certificate ---------------------------------------------------------------

def escape_certificate(system) -> dict | None:
    """Direction u with min_i <u, b_i> > 0 when every map is a translation.

    Then <u, X_n> >= <u, x> + n * delta along every path, so each bounded
    ball is visited finitely often from every start.
    """
    if not isinstance(system, DiscreteIFS):
        return None
    if not all(m.is_translation() for m in system.maps):
        return None
    B = np.stack([m.b for m in system.maps])
    d = B.shape[1]
    # maximise t subject to <u, b_i> >= t, -1 <= u <= 1
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A = np.hstack([-B, np.ones((B.shape[0], 1))])
    res = linprog(c, A_ub=A, b_ub=np.zeros(B.shape[0]), bounds=[(-1, 1)] * d + [(None, 1)], method="highs")
    if res.status != 0:
        return None
    u = res.x[:d]
    delta = float(np.min(B @ u))
    if not delta > 0:
        return None
    return {"direction": u.tolist(), "drift": delta}


def _last_possible_visit(cert: dict, x, ball: Ball, metric) -> float:
    u = np.asarray(cert["direction"])
    # |<u, y - z>| <= ||u||_1 * ||y - z||_inf <= ||u||_1 * rho(y, z) for the supported metrics
    reach = float(u @ np.asarray(ball.center)) + float(np.abs(u).sum()) * ball.radius
    return max(0.0, (reach - float(u @ as_point(x))) / cert["drift"])


# -- particle helpers -----------------------------------------------------------------

def _start_positions(system, start, particles, seed):
    if isinstance(start, FiniteMeasure):
        return initial_positions(start, particles, seed, system.dim)
    return initial_positions(as_point(start, system.dim), particles, seed, system.dim)


def _hit_counts(system, start, radii, z, horizon, particles, seed, workers, traj_offset):
    """Per-step counts of particles inside B(z, r) for every radius (nested, same paths)."""
    zc = as_point(z, system.dim)
    X0 = _start_positions(system, start, particles, seed)
    counts = np.zeros((len(radii), horizon), dtype=np.int64)
    rr = np.asarray(radii, dtype=float)[:, None]

    def observe(k, X):
        dist = system.metric.rowwise(X, np.broadcast_to(zc, X.shape))
        counts[:, k - 1] = np.count_nonzero(dist[None, :] < rr, axis=1)

    run_particles(system, X0, horizon, seed, workers=workers, traj_offset=traj_offset, observer=observe)
    return counts


def _eps_grid(eps, eps_grid):
    grid = sorted(set([float(eps)] + [float(e) for e in (eps_grid or [eps / 2])]))
    if grid[0] <= 0:
        raise InputError("ball radii must be positive")
    return grid


def _monotone(rows) -> bool:
    rows = np.asarray(rows, dtype=float)
    return bool(np.all(np.diff(rows, axis=0) >= -EXACT_TOL))


def _system_id(system) -> str:
    return config_hash(system)


# -- lower-bound mass ---------------------------------------------------------------------

def lower_bound_mass_estimate(system, z, eps: float, starts, horizon: int, window: int, *, particles: int = 1000,
                              seed: int = 0, workers: int = 1, ball_states=None, eps_grid=None) -> CriterionReport:
    """Trailing-window minimum of Cesaro ball-hit frequencies, per start.

    ``starts`` lists points (or chain states); a single :class:`FiniteMeasure`
    is also accepted as the initial law.
    """
    if not (horizon >= window >= 1):
        raise InputError("need horizon >= window >= 1")
    if isinstance(starts, FiniteMeasure):
        starts = [starts]
    starts = list(starts)
    if not starts:
        raise InputError("need at least one start")
    params = {"system": _system_id(system), "z": z, "eps": eps, "starts": [_jsonable(s) for s in starts],
              "horizon": horizon, "window": window, "particles": particles, "seed": seed}
    ms = np.arange(horizon - window + 1, horizon + 1)
    per_start = []
    caveats = ["liminf proxied by the minimum over the trailing window of Cesaro averages"]

    if isinstance(system, ExactChain):
        mask = _chain_mask(system, z, eps, ball_states)
        params["ball_states"] = np.nonzero(mask)[0].tolist()
        for x in starts:
            h = _chain_ball_masses(system, int(x), mask, horizon)
            ces = np.cumsum(h) / np.arange(1, horizon + 1)
            prof = _chain_limit_profile(system, int(x), mask)
            per_start.append({"start": int(x), "window_values": ces[ms - 1], "min": float(ces[ms - 1].min()),
                              "cesaro_limit": prof["cesaro_limit"], "cesaro_zero": prof["cesaro_zero"],
                              "exact": True})
        refuted = any(p["cesaro_zero"] for p in per_start)
        verdict = REFUTED if refuted else SUPPORTED
        return CriterionReport("lower_bound_mass", {"per_start": per_start,
                                                     "min": min(p["min"] for p in per_start),
                                                     "mode": "chain-exact"},
                               verdict, params, caveats)

    grid = _eps_grid(eps, eps_grid)
    primary = grid.index(float(eps))
    cert = escape_certificate(system)
    monotone = True
    for j, x in enumerate(starts):
        counts = _hit_counts(system, x, grid, z, horizon, particles, seed, workers, traj_offset=j * particles)
        ces = np.cumsum(counts, axis=1) / (particles * np.arange(1, horizon + 1))
        mins = ces[:, ms - 1].min(axis=1)
        monotone &= _monotone(mins)
        p = float(mins[primary])
        se = math.sqrt(max(p * (1 - p), 0.0) / particles)
        entry = {"start": _jsonable(x if not isinstance(x, FiniteMeasure) else x.to_dict()),
                 "window_values": ces[primary, ms - 1], "min": p, "stderr": se,
                 "min_by_eps": dict(zip(map(repr, grid), mins.tolist()))}
        if cert is not None and not isinstance(x, FiniteMeasure):
            entry["last_possible_visit"] = _last_possible_visit(cert, x, Ball(z, eps), system.metric)
        per_start.append(entry)
    if not monotone:
        raise AssertionError("ball-hit estimates are not monotone in eps")
    estimates = {"per_start": per_start, "min": min(p["min"] for p in per_start), "monotone_in_eps": monotone,
                 "mode": "particles"}
    if cert is not None:
        estimates["escape_certificate"] = cert
        verdict = REFUTED
        caveats.append("refuted by an exact escape argument: every map is a translation with positive drift")
    elif all(p["min"] > 3 * p["stderr"] and p["min"] > 0 for p in per_start):
        verdict = SUPPORTED
    else:
        verdict = INCONCLUSIVE
    return CriterionReport("lower_bound_mass", estimates, verdict, params, caveats)


# -- stability lower bound ---------------------------------------------------------------

def stability_lower_bound_estimate(system, z, eps: float, grid, horizon: int, window: int | None = None, *,
                                   particles: int = 1000, seed: int = 0, workers: int = 1,
                                   ball_states=None, eps_grid=None) -> CriterionReport:
    """Per-start minimum of per-step ball masses over the trailing window; inf over the grid."""
    grid = list(grid)
    if not grid:
        raise InputError("start grid must be nonempty")
    window = max(1, horizon // 2) if window is None else int(window)
    if not (horizon >= window >= 1):
        raise InputError("need horizon >= window >= 1")
    params = {"system": _system_id(system), "z": z, "eps": eps, "grid": grid, "horizon": horizon,
              "window": window, "particles": particles, "seed": seed}
    caveats = [GRID_CAVEAT, "liminf proxied by the minimum over the trailing window of per-step masses"]
    per_start = []

    if isinstance(system, ExactChain):
        mask = _chain_mask(system, z, eps, ball_states)
        params["ball_states"] = np.nonzero(mask)[0].tolist()
        zero = False
        for x in grid:
            h = _chain_ball_masses(system, int(x), mask, horizon)
            prof = _chain_limit_profile(system, int(x), mask)
            zero |= prof["structurally_zero"]
            per_start.append({"start": int(x), "window_min": float(h[-window:].min()),
                              "liminf": prof["liminf"], "period": prof["period"],
                              "phase_limits": prof["phase_limits"], "exact": True})
        inf = min(p["liminf"] for p in per_start)
        verdict = REFUTED if zero else SUPPORTED
        return CriterionReport("stability_lower_bound", {"per_start": per_start, "inf": inf, "mode": "chain-exact"},
                               verdict, params, caveats)

    radii = _eps_grid(eps, eps_grid)
    primary = radii.index(float(eps))
    cert = escape_certificate(system)
    monotone = True
    for j, x in enumerate(grid):
        counts = _hit_counts(system, x, radii, z, horizon, particles, seed, workers, traj_offset=j * particles)
        masses = counts / particles
        mins = masses[:, -window:].min(axis=1)
        monotone &= _monotone(mins)
        p = float(mins[primary])
        per_start.append({"start": _jsonable(x), "window_min": p,
                          "stderr": math.sqrt(max(p * (1 - p), 0.0) / particles),
                          "min_by_eps": dict(zip(map(repr, radii), mins.tolist()))})
    if not monotone:
        raise AssertionError("per-step ball masses are not monotone in eps")
    inf = min(p["window_min"] for p in per_start)
    estimates = {"per_start": per_start, "inf": inf, "monotone_in_eps": monotone, "mode": "particles"}
    if cert is not None:
        estimates["escape_certificate"] = cert
        verdict = REFUTED
    elif all(p["window_min"] > 3 * p["stderr"] and p["window_min"] > 0 for p in per_start):
        verdict = SUPPORTED
    else:
        verdict = INCONCLUSIVE
    return CriterionReport("stability_lower_bound", estimates, verdict, params, caveats)


# -- dictionary evaluation along evolutions ------------------------------------------------

def _eval_dict(dictionary, points) -> np.ndarray:
    """(n_funcs, n_points) values."""
    return np.stack([np.asarray(f(points), dtype=float) for f in dictionary])


def exact_integrals(ifs: DiscreteIFS, m0: FiniteMeasure, dictionary, steps: int, *, prune_above: int = 1 << 16,
                    merge_radius: float = 0.0, mass_floor: float = 0.0):
    """<phi, P*^k m0> for k = 0..steps by exact dual evolution.

    Once the support exceeds ``prune_above`` atoms the measure is pruned; the
    accumulated Fortet-Mourier perturbation bound is returned alongside.
    """
    out = np.empty((steps + 1, len(dictionary)))
    m = m0
    fm_err = 0.0
    for k in range(steps + 1):
        if k:
            m = dual_step_exact(ifs, m)
            if m.size > prune_above and (merge_radius > 0 or mass_floor > 0):
                res = prune(m, mass_floor, merge_radius, ifs.metric)
                m, fm_err = res.measure, fm_err + res.fm_bound
        out[k] = [integrate(m, f) for f in dictionary]
    return out, fm_err


def _particle_integrals(system, start, dictionary, steps, particles, seed, workers, traj_offset=0):
    """Empirical <phi, P*^k delta_start> for k = 0..steps, plus per-step standard errors."""
    X0 = _start_positions(system, start, particles, seed)
    out = np.empty((steps + 1, len(dictionary)))
    se = np.empty_like(out)
    vals = _eval_dict(dictionary, X0)
    out[0], se[0] = vals.mean(axis=1), vals.std(axis=1) / math.sqrt(particles)

    def observe(k, X):
        v = _eval_dict(dictionary, X)
        out[k] = v.mean(axis=1)
        se[k] = v.std(axis=1) / math.sqrt(particles)

    run_particles(system, X0, steps, seed, workers=workers, traj_offset=traj_offset, observer=observe)
    return out, se


def _chain_dict(chain: ExactChain, dictionary) -> np.ndarray:
    if isinstance(dictionary, np.ndarray) or (dictionary and not callable(dictionary[0])):
        D = np.atleast_2d(np.asarray(dictionary, dtype=float))
    else:
        if chain.points is None:
            raise InputError("callable dictionary on a chain needs a state embedding")
        D = _eval_dict(dictionary, chain.points)
    if D.shape[1] != chain.n:
        raise InputError("dictionary rows must be functions on the chain's states")
    return D


def _chain_integrals(chain: ExactChain, x, D, steps) -> np.ndarray:
    v = np.zeros(chain.n)
    v[int(x)] = 1.0
    out = np.empty((steps + 1, D.shape[0]))
    out[0] = D @ v
    for k in range(1, steps + 1):
        v = v @ chain.P
        out[k] = D @ v
    return out


def _probe_point(x, r, metric):
    y = x.copy()
    if metric.kind == "truncated" and r >= metric.cap:
        raise InputError(f"probe radius {r} is not attainable below the metric cap {metric.cap}")
    y[0] += r
    return y


# -- e-property ------------------------------------------------------------------------------

def e_property_probe(system, dictionary, x, radii, horizon: int, *, particles: int = 1000, seed: int = 0,
                     mode: str = "sampler", workers: int = 1, prune_above: int = 1 << 16,
                     merge_radius: float = 0.0) -> CriterionReport:
    """Modulus table M(r) = max_phi max_{1<=n<=N} |P^n phi(y_r) - P^n phi(x)| with rho(x, y_r) = r."""
    radii = [float(r) for r in radii]
    if not radii or any(r <= 0 for r in radii):
        raise InputError("radii must be positive")
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise InputError("radii must be strictly decreasing")
    if horizon < 1:
        raise InputError("horizon must be >= 1")
    if isinstance(system, ExactChain):
        raise InputError("e-property probes need a system on a continuous state space")
    x = as_point(x, system.dim)
    probes = [_probe_point(x, r, system.metric) for r in radii]
    params = {"system": _system_id(system), "x": x, "radii": radii, "horizon": horizon, "mode": mode,
              "particles": particles, "seed": seed, "dictionary": [f.to_dict() for f in dictionary]}
    caveats = ["equicontinuity is sampled on the dictionary and a finite horizon only"]
    noise = np.zeros(len(radii))

    if mode == "exact":
        if not isinstance(system, DiscreteIFS):
            raise InputError("exact mode needs a discrete IFS")
        base, err0 = exact_integrals(system, dirac(x), dictionary, horizon, prune_above=prune_above,
                                     merge_radius=merge_radius)
        M = []
        errs = []
        for y in probes:
            vals, err = exact_integrals(system, dirac(y), dictionary, horizon, prune_above=prune_above,
                                        merge_radius=merge_radius)
            M.append(float(np.max(np.abs(vals[1:] - base[1:]))))
            errs.append(err + err0)
        if max(errs) > 0:
            caveats.append(f"pruning perturbation bound {max(errs):.3e}")
        noise = np.asarray(errs) * max(max((f.lipschitz() if hasattr(f, "lipschitz") else 1.0)
                                            for f in dictionary), 1.0)
    elif mode == "sampler":
        # common random numbers: every probe reuses trajectory ids 0..particles-1
        k = len(radii) + 1
        X0 = np.vstack([np.broadcast_to(p, (particles, system.dim)) for p in [x] + probes])
        traj = np.tile(np.arange(particles, dtype=np.uint64), k)
        diffs = np.zeros(len(radii))
        se = np.zeros(len(radii))

        def observe(step, X):
            v = _eval_dict(dictionary, X).reshape(len(dictionary), k, particles)
            d = v[:, 1:, :] - v[:, :1, :]
            mean = np.abs(d.mean(axis=2)).max(axis=0)
            spread = (d.std(axis=2) / math.sqrt(particles)).max(axis=0)
            np.maximum(diffs, mean, out=diffs)
            np.maximum(se, spread, out=se)

        run_particles(system, X0, horizon, seed, workers=workers, observer=observe, traj=traj)
        M = diffs.tolist()
        noise = 3.0 * se
    else:
        raise InputError(f"unknown mode {mode!r}")

    M = np.asarray(M)
    # radii are decreasing, so nondecreasing-in-r means M is nonincreasing along the list
    monotone = bool(np.all(np.diff(M) <= EXACT_TOL + noise[1:] + noise[:-1]))
    if not monotone:
        caveats.append("M(r) is not monotone in r at this resolution")
    r_min, r_max = radii[-1], radii[0]
    trend_ok = M[-1] <= noise[-1] + EXACT_TOL + math.sqrt(r_min / r_max) * M[0]
    verdict = SUPPORTED if (monotone and trend_ok) else INCONCLUSIVE
    estimates = {"modulus": dict(zip(map(repr, radii), M.tolist())), "M": M, "noise_floor": noise,
                 "monotone_in_r": monotone, "ratio_M_over_r": (M / np.asarray(radii)).tolist()}
    return CriterionReport("e_property", estimates, verdict, params, caveats)


# -- weak Cauchy diagnostic ------------------------------------------------------------------

def _step_integrals(system, z, dictionary, steps, mode, particles, seed, workers, prune_above, merge_radius):
    """(values[k, phi] for k = 0..steps, noise[k, phi], fm_err)."""
    if isinstance(system, ExactChain):
        D = _chain_dict(system, dictionary)
        return _chain_integrals(system, z, D, steps), np.zeros((steps + 1, D.shape[0])), 0.0
    if mode == "exact":
        if not isinstance(system, DiscreteIFS):
            raise InputError("exact mode needs a discrete IFS")
        m0 = z if isinstance(z, FiniteMeasure) else dirac(as_point(z, system.dim))
        vals, err = exact_integrals(system, m0, dictionary, steps, prune_above=prune_above,
                                    merge_radius=merge_radius)
        return vals, np.zeros_like(vals), err
    if mode == "sampler":
        vals, se = _particle_integrals(system, z, dictionary, steps, particles, seed, workers)
        return vals, se, 0.0
    raise InputError(f"unknown mode {mode!r}")


def cauchy_diagnostic(system, z, dictionary, n_grid, *, mode: str = "exact", seed: int = 0, particles: int = 1000,
                      workers: int = 1, prune_above: int = 64, merge_radius: float = 2.0 ** -12) -> CriterionReport:
    """D(n, m) = max_phi |<phi, Q_n delta_z> - <phi, Q_m delta_z>| on a grid, plus D(n, 2n)."""
    grid = [int(n) for n in n_grid]
    if len(grid) < 2 or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
        raise InputError("n grid must be increasing with at least two positive entries")
    steps = 2 * grid[-1]
    vals, noise, fm_err = _step_integrals(system, z, dictionary, steps, mode, particles, seed, workers,
                                          prune_above, merge_radius)
    # Q_n is linear, so <phi, Q_n delta_z> is the running mean of per-step integrals
    # offsets from step 1 keep constant sequences exactly constant
    dev = np.cumsum(vals[1:] - vals[1], axis=0)
    Q = vals[1] + dev / np.arange(1, steps + 1)[:, None]
    G = np.array([Q[n - 1] for n in grid])
    D = np.max(np.abs(G[:, None, :] - G[None, :, :]), axis=2)
    D2 = np.array([float(np.max(np.abs(Q[2 * n - 1] - Q[n - 1]))) for n in grid])
    decreasing = bool(np.all(np.diff(D2) <= EXACT_TOL))
    params = {"system": _system_id(system), "z": _jsonable(z), "n_grid": grid, "mode": mode, "seed": seed,
              "particles": particles}
    caveats = ["weak Cauchy property tested on the dictionary and a finite grid only"]
    if fm_err > 0:
        caveats.append(f"pruning perturbation bound {fm_err:.3e} per integral")
    estimates = {"D": D, "D_n_2n": dict(zip(map(str, grid), D2.tolist())), "decreasing": decreasing}
    if mode == "sampler" and not isinstance(system, ExactChain):
        estimates["noise_floor"] = float(3 * noise.max())
    verdict = SUPPORTED if decreasing else INCONCLUSIVE
    return CriterionReport("cauchy", estimates, verdict, params, caveats)


# -- invariant residual ------------------------------------------------------------------------

def invariant_residual(ifs: DiscreteIFS, candidate: FiniteMeasure, **kwargs) -> float:
    """fm(P* candidate, candidate); zero exactly at fixed points of the exact dual step."""
    return fm_distance(dual_step_exact(ifs, candidate), candidate, ifs.metric, **kwargs).value


def dyadic_lebesgue(level: int) -> FiniteMeasure:
    """Uniform atoms at the 2^level cell midpoints of [0, 1]."""
    n = 1 << level
    return FiniteMeasure._trusted(((np.arange(n) + 0.5) / n)[:, None], np.full(n, 1.0 / n), merge=False)


# -- uniform convergence on compacts -----------------------------------------------------------

def uniform_compact_convergence(system, dictionary, compact, mu_star, horizon: int, *, mode: str = "exact",
                                seed: int = 0, particles: int = 1000, workers: int = 1, tol: float = 1e-2,
                                prune_above: int = 1 << 12, merge_radius: float = 2.0 ** -14) -> CriterionReport:
    """sup_{x in K} max_phi |P^n phi(x) - <phi, mu*>| for n = 0..horizon."""
    K = list(compact)
    if not K:
        raise InputError("compact grid must be nonempty")
    if horizon < 1:
        raise InputError("horizon must be >= 1")
    if isinstance(system, ExactChain):
        D = _chain_dict(system, dictionary)
        target = D @ np.asarray(mu_star, dtype=float)
    else:
        target = np.array([integrate(mu_star, f) for f in dictionary])
    sup = np.zeros(horizon + 1)
    noise = np.zeros(horizon + 1)
    fm_err = 0.0
    for j, x in enumerate(K):
        if mode == "sampler" and not isinstance(system, ExactChain):
            vals, se = _particle_integrals(system, x, dictionary, horizon, particles, seed, workers,
                                           traj_offset=j * particles)
            np.maximum(noise, 3 * se.max(axis=1), out=noise)
        else:
            vals, _, err = _step_integrals(system, x, dictionary, horizon, mode, particles, seed, workers,
                                           prune_above, merge_radius)
            fm_err = max(fm_err, err)
        np.maximum(sup, np.max(np.abs(vals - target), axis=1), out=sup)
    half = horizon // 2
    if sup[half] > 0 and sup[-1] > 0 and horizon > half:
        rate = float((sup[-1] / sup[half]) ** (1.0 / (horizon - half)))
    else:
        rate = 0.0
    params = {"system": _system_id(system), "compact": [_jsonable(x) for x in K], "horizon": horizon,
              "mode": mode, "tol": tol, "seed": seed, "particles": particles}
    caveats = [GRID_CAVEAT]
    if fm_err > 0:
        caveats.append(f"pruning perturbation bound {fm_err:.3e}")
    verdict = SUPPORTED if sup[-1] < tol else INCONCLUSIVE
    estimates = {"sup": sup, "final": float(sup[-1]), "decay_rate": rate, "noise_floor": noise}
    return CriterionReport("uniform_compact_convergence", estimates, verdict, params, caveats)
