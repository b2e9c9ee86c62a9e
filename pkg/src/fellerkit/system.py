"""Concrete Markov systems and checkers for their contraction hypotheses.

Three system families share the particle and exact machinery:

* :class:`DiscreteIFS` -- place-dependent iterated function system of affine maps,
  ``Pf(x) = sum_i p_i(x) f(w_i(x))``;
* :class:`JumpFlowSystem` -- a diagonal exponential flow run for an Exp(gamma)
  holding time, then one IFS jump (the embedded chain of a jump-flow process);
* :class:`ExactChain` -- a row-stochastic matrix, the exact oracle for every
  decomposition identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from . import kernels
from .errors import DegenerateError, InputError, NumericError, ResourceError
from .geometry import EUCLIDEAN, MetricSpec, as_point
from .measure import FiniteMeasure
from .rng import KeyedStream, check_seed

DUAL_STEP_CAP = 1 << 22
QUAD_TOL = 1e-9
CLOCK_TAIL = 1e-10


# -- building blocks ----------------------------------------------------------

class AffineMap:
    """x -> A x + b."""

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if A.shape != (b.size, b.size):
            raise InputError(f"affine map needs a square A matching b, got A{A.shape}, b{b.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise InputError("affine map entries must be finite")
        A.setflags(write=False)
        b.setflags(write=False)
        self.A = A
        self.b = b

    @classmethod
    def scalar(cls, slope: float, shift: float = 0.0) -> "AffineMap":
        return cls([[slope]], [shift])

    @property
    def dim(self) -> int:
        return self.b.size

    def apply(self, points) -> np.ndarray:
        return np.atleast_2d(np.asarray(points, dtype=float)) @ self.A.T + self.b

    def __call__(self, p) -> np.ndarray:
        return self.A @ as_point(p, self.dim) + self.b

    def lipschitz(self, metric: MetricSpec = EUCLIDEAN) -> float:
        if metric.kind == "chebyshev":
            return float(np.linalg.norm(self.A, np.inf))
        L = float(np.linalg.norm(self.A, 2))
        # min(L t, cap) <= max(L, 1) min(t, cap)
        return max(L, 1.0) if metric.kind == "truncated" else L

    def is_translation(self) -> bool:
        return bool(np.array_equal(self.A, np.eye(self.dim)))

    def to_dict(self):
        return {"A": self.A.tolist(), "b": self.b.tolist()}


def _dual_norm(v: np.ndarray, metric: MetricSpec) -> np.ndarray:
    if metric.kind == "chebyshev":
        return np.sum(np.abs(v), axis=-1)
    return np.sqrt(np.sum(v * v, axis=-1))


class ProbabilityField:
    """Either constant weights or a softmax of affine scores."""

    def __init__(self, kind: str, weights=None, theta=None, offsets=None):
        self.kind = kind
        if kind == "constant":
            w = np.asarray(weights, dtype=float).ravel()
            if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise InputError("constant probabilities must be finite and nonnegative")
            if abs(math.fsum(w) - 1.0) > 1e-12:
                raise InputError(f"constant probabilities sum to {math.fsum(w)!r}, not 1")
            self.weights = w
            self.cum = np.cumsum(w)
            self.cum[-1] = 1.0
            self.N = w.size
        elif kind == "softmax":
            th = np.atleast_2d(np.asarray(theta, dtype=float))
            off = np.zeros(th.shape[0]) if offsets is None else np.asarray(offsets, dtype=float).ravel()
            if off.size != th.shape[0]:
                raise InputError("softmax offsets must have one entry per map")
            if not (np.all(np.isfinite(th)) and np.all(np.isfinite(off))):
                raise InputError("softmax parameters must be finite")
            self.theta = th
            self.offsets = off
            self.N = th.shape[0]
        else:
            raise InputError(f"unknown probability field kind {kind!r}")

    @classmethod
    def constant(cls, weights) -> "ProbabilityField":
        return cls("constant", weights=weights)

    @classmethod
    def softmax(cls, theta, offsets=None) -> "ProbabilityField":
        return cls("softmax", theta=theta, offsets=offsets)

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "constant":
            return np.broadcast_to(self.weights, (pts.shape[0], self.N)).copy()
        logits = pts @ self.theta.T + self.offsets
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def lipschitz_bound(self, metric: MetricSpec = EUCLIDEAN) -> float:
        """Analytic bound on sum_i |p_i(x) - p_i(y)| / rho(x, y)."""
        if self.kind == "constant":
            return 0.0
        diffs = self.theta[:, None, :] - self.theta[None, :, :]
        diam = float(np.max(_dual_norm(diffs, metric)))
        # sum_i p_i |theta_i - mean| is at most diam/2 for two maps or on the line
        bound = diam / 2 if (self.N == 2 or self.theta.shape[1] == 1) else diam
        if metric.kind == "truncated":
            bound = max(bound, 2.0 / metric.cap) if bound > 0 else 0.0
        return bound

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "weights": self.weights.tolist()}
        return {"kind": "softmax", "theta": self.theta.tolist(), "offsets": self.offsets.tolist()}


@dataclass(frozen=True)
class FlowSpec:
    """Diagonal exponential semi-flow S(t)x = (e^{lam_1 t} x_1, ..., e^{lam_d t} x_d)."""

    lam: tuple

    def __post_init__(self):
        lam = tuple(float(v) for v in np.atleast_1d(self.lam))
        if not all(math.isfinite(v) for v in lam):
            raise InputError("flow exponents must be finite")
        object.__setattr__(self, "lam", lam)

    @property
    def kappa(self) -> float:
        return max(self.lam)

    def apply(self, points, t) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return pts * np.exp(t * np.asarray(self.lam))
        return pts * np.exp(t[:, None] * np.asarray(self.lam)[None, :])

    def to_dict(self):
        return {"lambda": list(self.lam)}


def _check_maps(maps, probs, metric):
    maps = list(maps)
    if not maps:
        raise InputError("a system needs at least one map")
    dims = {m.dim for m in maps}
    if len(dims) != 1:
        raise InputError(f"maps have inconsistent dimensions {sorted(dims)}")
    if probs.N != len(maps):
        raise InputError(f"{len(maps)} maps but {probs.N} probabilities")
    if probs.kind == "softmax" and probs.theta.shape[1] != maps[0].dim:
        raise InputError("softmax theta dimension does not match the maps")
    return maps


class _ParticleSystem:
    maps: list
    probs: ProbabilityField
    metric: MetricSpec

    @property
    def dim(self) -> int:
        return self.maps[0].dim

    @property
    def N(self) -> int:
        return len(self.maps)

    def _packed(self):
        cached = getattr(self, "_pack", None)
        if cached is None:
            A = np.ascontiguousarray(np.stack([m.A for m in self.maps]))
            b = np.ascontiguousarray(np.stack([m.b for m in self.maps]))
            N, d = b.shape
            if self.probs.kind == "constant":
                pk, cum = 0, np.ascontiguousarray(self.probs.cum)
                theta, offs = np.zeros((N, d)), np.zeros(N)
            else:
                pk, cum = 1, np.zeros(N)
                theta = np.ascontiguousarray(self.probs.theta)
                offs = np.ascontiguousarray(self.probs.offsets)
            cached = (A, b, pk, cum, theta, offs)
            self._pack = cached
        return cached

    def _flow(self):
        return np.zeros(self.dim), 1.0, 0

    def advance(self, X: np.ndarray, traj: np.ndarray, step: int, seed: int) -> np.ndarray:
        """One keyed transition for every row of ``X`` (trajectory ids ``traj``)."""
        A, b, pk, cum, theta, offs = self._packed()
        lam, gamma, has_flow = self._flow()
        out, bad = kernels.particle_step(
            np.ascontiguousarray(X, dtype=float), np.ascontiguousarray(traj, dtype=np.uint64),
            int(step), check_seed(seed), A, b, pk, cum, theta, offs, lam, float(gamma), has_flow,
        )
        if bad >= 0:
            raise NumericError(f"non-finite state in trajectory {int(traj[bad])} at step {step}")
        return out


class DiscreteIFS(_ParticleSystem):
    kind = "ifs"

    def __init__(self, maps: Sequence[AffineMap], probs: ProbabilityField, metric: MetricSpec = EUCLIDEAN):
        self.maps = _check_maps(maps, probs, metric)
        self.probs = probs
        self.metric = metric

    def to_dict(self):
        return {"type": "ifs", "maps": [m.to_dict() for m in self.maps], "probs": self.probs.to_dict(),
                "metric": self.metric.to_dict()}


class JumpFlowSystem(_ParticleSystem):
    kind = "jumpflow"

    def __init__(self, flow: FlowSpec, gamma: float, maps: Sequence[AffineMap], probs: ProbabilityField,
                 metric: MetricSpec = EUCLIDEAN):
        if not (gamma > 0 and math.isfinite(gamma)):
            raise InputError("clock rate gamma must be positive and finite")
        self.maps = _check_maps(maps, probs, metric)
        if len(flow.lam) != self.maps[0].dim:
            raise InputError("flow dimension does not match the maps")
        self.flow = flow
        self.gamma = float(gamma)
        self.probs = probs
        self.metric = metric

    def _flow(self):
        return np.ascontiguousarray(self.flow.lam, dtype=float), self.gamma, 1

    def to_dict(self):
        return {"type": "jumpflow", "flow": self.flow.to_dict(), "gamma": self.gamma,
                "maps": [m.to_dict() for m in self.maps], "probs": self.probs.to_dict(),
                "metric": self.metric.to_dict()}


class ExactChain:
    kind = "chain"

    def __init__(self, P, points=None, metric: MetricSpec = EUCLIDEAN):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise InputError(f"transition matrix must be square, got {P.shape}")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise InputError("transition matrix entries must be finite and nonnegative")
        rows = P.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > 1e-12:
            raise InputError(f"rows must sum to 1, worst row sum {rows[np.argmax(np.abs(rows - 1))]!r}")
        P.setflags(write=False)
        self.P = P
        self.points = None if points is None else np.atleast_2d(np.asarray(points, dtype=float))
        if self.points is not None and self.points.shape[0] != P.shape[0]:
            raise InputError("state embedding needs one point per state")
        self.metric = metric

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def states_in_ball(self, ball) -> np.ndarray:
        if self.points is None:
            raise InputError("chain has no state embedding; pass ball_states explicitly")
        return np.nonzero(ball.contains(self.metric, self.points))[0]

    def to_dict(self):
        out = {"type": "chain", "matrix": self.P.tolist(), "metric": self.metric.to_dict()}
        if self.points is not None:
            out["points"] = self.points.tolist()
        return out


# -- sampling and exact operators ---------------------------------------------

def step_sample(system: _ParticleSystem, x, stream: KeyedStream) -> np.ndarray:
    """Draw one transition from ``x`` using (and advancing) ``stream``."""
    x = as_point(x, system.dim)
    step = stream.advance()
    return system.advance(x[None, :], np.array([stream.traj], dtype=np.uint64), step, stream.seed)[0]


def dual_step_exact(ifs: DiscreteIFS, m: FiniteMeasure, *, cap: int = DUAL_STEP_CAP) -> FiniteMeasure:
    """P* m: atoms (w_i(x_j), p_i(x_j) m_j), merged."""
    if m.dim != ifs.dim:
        raise InputError(f"measure in R^{m.dim}, system in R^{ifs.dim}")
    if m.size * ifs.N > cap:
        raise ResourceError(f"dual step would create {m.size * ifs.N} atoms (cap {cap}); prune first")
    p = ifs.probs(m.points)
    pts = np.vstack([mp.apply(m.points) for mp in ifs.maps])
    w = (p * m.weights[:, None]).T.ravel()
    if not np.all(np.isfinite(pts)):
        raise NumericError("dual step produced non-finite atoms")
    out = FiniteMeasure._trusted(pts, w)
    total = out.weights.sum()
    if abs(total - 1.0) > 1e-12:
        out = FiniteMeasure._trusted(out.points, out.weights / total, merge=False)
    return out


def apply_P(system, f, x) -> float:
    """(P f)(x): exact sum for an IFS, quadrature over the holding time for a jump-flow."""
    if isinstance(system, ExactChain):
        return float(system.P[int(x)] @ np.asarray(f, dtype=float))
    x = as_point(x, system.dim)
    if isinstance(system, DiscreteIFS):
        p = system.probs(x[None, :])[0]
        vals = np.array([f(mp.apply(x[None, :]))[0] for mp in system.maps])
        return math.fsum(p * vals)
    if isinstance(system, JumpFlowSystem):
        gamma = system.gamma
        t_cut = -math.log(CLOCK_TAIL) / gamma

        def integrand(t):
            xi = system.flow.apply(x[None, :], t)
            if not np.all(np.isfinite(xi)):
                raise NumericError(f"flow overflow at t={t} from x={x.tolist()}")
            p = system.probs(xi)[0]
            vals = np.array([f(mp.apply(xi))[0] for mp in system.maps])
            return gamma * math.exp(-gamma * t) * float(p @ vals)

        value, err = integrate.quad(integrand, 0.0, t_cut, epsabs=QUAD_TOL / 10, epsrel=0.0, limit=400)
        if err > QUAD_TOL:
            raise NumericError(f"quadrature reached only {err:.3e} (target {QUAD_TOL:.0e})")
        return value
    raise InputError(f"unsupported system type {type(system).__name__}")


def chain_dual_step(chain: ExactChain, dist) -> np.ndarray:
    v = np.asarray(dist, dtype=float)
    if v.shape != (chain.n,):
        raise InputError(f"distribution must have length {chain.n}")
    return v @ chain.P


def chain_stationary(chain: ExactChain) -> np.ndarray:
    n = chain.n
    M = chain.P.T - np.eye(n)
    sv = np.linalg.svd(M, compute_uv=False)
    null_dim = int(np.sum(sv <= 1e-10 * max(1.0, sv[0])))
    if null_dim > 1:
        raise DegenerateError(f"stationary distribution is not unique (null space dimension {null_dim})")
    A = np.vstack([M, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(A, rhs, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    # one refinement step on the square system with the last equation replaced
    B = M.copy()
    B[-1] = 1.0
    r = np.zeros(n)
    r[-1] = 1.0
    try:
        pi2 = np.linalg.solve(B, r)
        if np.all(pi2 >= -1e-15) and np.abs(pi2 @ chain.P - pi2).sum() <= np.abs(pi @ chain.P - pi).sum():
            pi = np.clip(pi2, 0.0, None) / np.clip(pi2, 0.0, None).sum()
    except np.linalg.LinAlgError:
        pass
    resid = float(np.abs(pi @ chain.P - pi).sum())
    if resid > 1e-12:
        raise DegenerateError(f"stationary residual {resid:.3e} exceeds 1e-12")
    return pi


# -- hypothesis checkers --------------------------------------------------------

def _sample_pairs(rng, n, d, box, min_sep=1e-3):
    x = rng.uniform(-box, box, size=(n, d))
    direction = rng.normal(size=(n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    scale = np.exp(rng.uniform(math.log(min_sep), math.log(2 * box), size=(n, 1)))
    return x, x + direction * scale


def check_avg_contraction(ifs: DiscreteIFS, n_pairs: int = 2000, rng=None, box: float = 10.0) -> dict:
    """Max over sampled pairs of sum_i p_i(x) rho(w_i x, w_i y) / rho(x, y)."""
    if n_pairs < 1:
        raise InputError("need at least one sample pair")
    rng = np.random.default_rng(rng)
    x, y = _sample_pairs(rng, n_pairs, ifs.dim, box)
    base = ifs.metric.rowwise(x, y)
    p = ifs.probs(x)
    moved = np.column_stack([ifs.metric.rowwise(mp.apply(x), mp.apply(y)) for mp in ifs.maps])
    ratio = np.sum(p * moved, axis=1) / base
    estimate = float(ratio.max())
    analytic = None
    if ifs.probs.kind == "constant" and ifs.metric.kind != "truncated":
        analytic = math.fsum(ifs.probs.weights * np.array([mp.lipschitz(ifs.metric) for mp in ifs.maps]))
    r = analytic if analytic is not None else estimate
    return {
        "condition": "average_contraction",
        "estimate": estimate,
        "analytic_bound": analytic,
        "r": r,
        "contractive": bool(r < 1.0),
        "status": "proof" if analytic is not None else "evidence",
        "pairs": int(n_pairs),
    }


def check_prob_lipschitz(ifs: DiscreteIFS, n_pairs: int = 2000, rng=None, box: float = 10.0) -> dict:
    """Max over sampled pairs of sum_i |p_i(x) - p_i(y)| / rho(x, y)."""
    if n_pairs < 1:
        raise InputError("need at least one sample pair")
    rng = np.random.default_rng(rng)
    analytic = ifs.probs.lipschitz_bound(ifs.metric)
    if ifs.probs.kind == "constant":
        estimate = 0.0
    else:
        x, y = _sample_pairs(rng, n_pairs, ifs.dim, box)
        ratio = np.sum(np.abs(ifs.probs(x) - ifs.probs(y)), axis=1) / ifs.metric.rowwise(x, y)
        estimate = float(ratio.max())
    return {
        "condition": "probability_lipschitz",
        "estimate": estimate,
        "analytic_bound": analytic,
        "a": analytic,
        "status": "proof",
        "pairs": int(n_pairs),
    }


def check_flow_expansion(flow: FlowSpec, n_samples: int = 2000, rng=None, metric: MetricSpec = EUCLIDEAN,
                         box: float = 10.0, t_max: float = 5.0) -> dict:
    """Max over samples of log(rho(S(t)x, S(t)y) / rho(x, y)) / t."""
    rng = np.random.default_rng(rng)
    d = len(flow.lam)
    x, y = _sample_pairs(rng, n_samples, d, box)
    t = rng.uniform(1e-3, t_max, size=n_samples)
    num = metric.rowwise(flow.apply(x, t), flow.apply(y, t))
    den = metric.rowwise(x, y)
    with np.errstate(divide="ignore"):
        rates = np.log(num / den) / t
    estimate = float(np.max(rates))
    if metric.kind == "truncated":
        analytic = max(flow.kappa, 0.0)
    else:
        analytic = flow.kappa
    return {
        "condition": "flow_expansion",
        "estimate": estimate,
        "analytic_bound": analytic,
        "kappa": analytic,
        "within_bound": bool(estimate <= analytic + 1e-9),
        "status": "proof",
        "samples": int(n_samples),
    }


def check_spectral_gap_condition(r: float, kappa: float, gamma: float) -> dict:
    if not gamma > 0:
        raise InputError("gamma must be positive")
    value = r + kappa / gamma
    return {"condition": "r_plus_kappa_over_gamma", "value": value, "pass": bool(value < 1.0),
            "attractor": "unverifiable for diagonal flows"}


@dataclass(frozen=True)
class ModulusPair:
    """r(t) = c t^q and omega(t) = a t^beta."""

    c: float
    q: float = 1.0
    a: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not (self.c > 0 and self.a > 0):
            raise InputError("modulus coefficients must be positive")
        if not (0 < self.q <= 1):
            raise InputError("unsupported r-modulus: need r(t) = c t^q with 0 < q <= 1 (concave)")
        if not (0 < self.beta <= 1):
            raise InputError("unsupported omega-modulus: need omega(t) = a t^beta with 0 < beta <= 1")

    def r(self, t):
        return self.c * np.power(t, self.q)

    def omega(self, t):
        return self.a * np.power(t, self.beta)


def check_moduli_pair(pair: ModulusPair, t_grid, n_terms: int = 200) -> dict:
    """Partial sums of sum_n omega(r^n(t)), a tail bound, and r(t) < t witnesses."""
    t = np.asarray(t_grid, dtype=float)
    if np.any(t <= 0):
        raise InputError("t grid must be positive")
    iterate = t.copy()
    partial = np.zeros_like(t)
    for _ in range(n_terms):
        iterate = pair.r(iterate)
        partial += pair.omega(iterate)
    below = pair.r(t) < t
    if pair.q == 1.0 and pair.c < 1.0:
        ratio = pair.c ** pair.beta
        tail = pair.a * ratio ** (n_terms + 1) * t ** pair.beta / (1 - ratio)
        tail_kind = "geometric"
    else:
        # r(t) = c t^q with q < 1 has a positive fixed point; omega(r^n(t)) does not vanish
        tail = np.full_like(t, np.inf)
        tail_kind = "divergent" if pair.q < 1.0 or pair.c >= 1.0 else "unknown"
    witnesses = [float(v) for v in t[~below]]
    passed = bool(np.all(below) and np.all(tail < 1e-9))
    return {
        "condition": "moduli_pair",
        "t": t.tolist(),
        "partial_sums": partial.tolist(),
        "tail_bound": tail.tolist(),
        "tail_kind": tail_kind,
        "r_below_identity": below.tolist(),
        "witnesses_r_ge_t": witnesses,
        "pass": passed,
    }


def check_ifs_stability_hypotheses(ifs: DiscreteIFS, pair: ModulusPair, n_pairs: int = 2000, rng=None,
                                   box: float = 10.0) -> dict:
    """Sampled evidence for the concave-modulus stability hypotheses of a place-dependent IFS."""
    rng = np.random.default_rng(rng)
    x, y = _sample_pairs(rng, n_pairs, ifs.dim, box)
    rho = ifs.metric.rowwise(x, y)
    p = ifs.probs(x)
    moved = np.column_stack([ifs.metric.rowwise(mp.apply(x), mp.apply(y)) for mp in ifs.maps])
    contraction_gap = float(np.max(np.sum(p * moved, axis=1) - pair.r(rho)))
    prob_gap = float(np.max(np.sum(np.abs(p - ifs.probs(y)), axis=1) - pair.omega(rho)))
    lips = np.array([mp.lipschitz(ifs.metric) for mp in ifs.maps])
    if ifs.probs.kind == "constant":
        inf_p = ifs.probs.weights.copy()
    else:
        corners = np.array(np.meshgrid(*[[-box, box]] * ifs.dim)).reshape(ifs.dim, -1).T
        inf_p = np.minimum(ifs.probs(x).min(axis=0), ifs.probs(corners).min(axis=0))
    contracting = [int(k) for k in np.nonzero((lips < 1.0) & (inf_p > 0))[0]]
    x_hat_ok = bool(np.any(ifs.probs(x).min(axis=1) > 0))
    return {
        "condition": "concave_moduli_stability",
        "contraction_gap": contraction_gap,
        "probability_gap": prob_gap,
        "contracting_maps_with_positive_inf_prob": contracting,
        "x_hat_with_all_probs_positive": x_hat_ok,
        "inf_over": "sampled box" if ifs.probs.kind == "softmax" else "exact",
        "pass": bool(contraction_gap <= 1e-12 and prob_gap <= 1e-12 and contracting and x_hat_ok),
        "status": "evidence",
    }
