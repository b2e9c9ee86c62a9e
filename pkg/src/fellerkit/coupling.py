"""Ball-split couplings and the decomposition identities built from them.

Every construction here is exact bookkeeping: a measure is split as
``sigma * nu + (1 - sigma) * rest`` with ``nu`` the normalised restriction to
a ball, and the inductive constructions record each piece so that the
reconstruction can be checked against an independently computed target.
Chains carry the multi-step constructions because pruning would corrupt the
mass accounting on continuous state spaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InadmissibleSplitError, InputError
from .geometry import EUCLIDEAN, Ball, MetricSpec
from .measure import FiniteMeasure, restrict_normalize
from .semigroup import cesaro_matrix, cesaro_vector, composed_cesaro_gap
from .system import ExactChain

COEF_TOL = 1e-12


@dataclass(frozen=True)
class SigmaSchedule:
    alpha: float
    epsilon: float
    K: int
    sigmas: tuple

    def __getitem__(self, k: int) -> float:
        """1-based access: schedule[k] is sigma_k."""
        return self.sigmas[k - 1]


def sigma_schedule(alpha: float, epsilon: float, K: int) -> SigmaSchedule:
    """sigma_k = alpha * prod_{j<=k} (1 - epsilon**(1/j))."""
    if not (0 < alpha < 1):
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    if not (0 < epsilon < 1):
        raise InputError(f"epsilon must lie in (0, 1), got {epsilon}")
    if K < 1:
        raise InputError("K must be >= 1")
    sigmas = []
    s = alpha
    for j in range(1, K + 1):
        s *= 1.0 - epsilon ** (1.0 / j)
        sigmas.append(s)
    # strict decrease holds mathematically; for tiny epsilon the factors round to 1
    if not (0 < sigmas[-1] and sigmas[0] <= alpha and all(a >= b for a, b in zip(sigmas, sigmas[1:]))):
        raise InputError("schedule underflowed; epsilon too close to 1 for this K")
    return SigmaSchedule(alpha, epsilon, K, tuple(sigmas))


def lemma_ineq_margin(alpha: float, k: int, epsilon: float) -> float:
    """(1 - a(1+e)) / (1 - a(1 - e^{1/k})^k) - (1 - e^{1/(k+1)}).

    Evaluated as ``a(c - 1 - e)/den + e^{1/(k+1)}`` with ``c - 1`` from expm1,
    so the sign stays reliable as epsilon -> 0.
    """
    if not (0 < alpha < 1) or k < 1 or not (0 < epsilon < 1):
        raise InputError("need alpha in (0,1), k >= 1, epsilon in (0,1)")
    root = epsilon ** (1.0 / k)
    c_minus_1 = math.expm1(k * math.log1p(-root))
    den = 1.0 - alpha * (1.0 + c_minus_1)
    if den <= 0:
        raise InputError(f"denominator {den} is not positive")
    return alpha * (c_minus_1 - epsilon) / den + epsilon ** (1.0 / (k + 1))


def lemma_threshold(alpha: float, k: int, *, lo: float = 1e-300, hi: float = 0.5,
                    iterations: int = 60, scan: int = 600) -> float:
    """Largest epsilon (to bisection accuracy) below which the margin stays positive.

    A log-spaced scan locates the first nonpositive grid point; bisection in
    log(epsilon) then refines the crossing.  Returns ``hi`` when the margin is
    positive on the whole scan.
    """
    grid = np.logspace(math.log10(lo), math.log10(hi), scan)
    signs = np.array([lemma_ineq_margin(alpha, k, e) > 0 for e in grid])
    if not signs[0]:
        return 0.0
    if signs.all():
        return hi
    first_bad = int(np.argmin(signs))
    a, b = math.log(grid[first_bad - 1]), math.log(grid[first_bad])
    for _ in range(iterations):
        mid = 0.5 * (a + b)
        if lemma_ineq_margin(alpha, k, math.exp(mid)) > 0:
            a = mid
        else:
            b = mid
    return math.exp(a)


# -- single splits ----------------------------------------------------------------

def ball_split(m: FiniteMeasure, ball: Ball, sigma: float, metric: MetricSpec = EUCLIDEAN):
    """(nu, rest) with m = sigma * nu + (1 - sigma) * rest and nu supported in ``ball``."""
    if not (0 <= sigma < 1):
        raise InputError(f"sigma must lie in [0, 1), got {sigma}")
    mass, nu = restrict_normalize(m, ball, metric)
    if mass <= sigma or nu.empty:
        raise InadmissibleSplitError(f"ball mass {mass!r} does not exceed sigma {sigma!r}",
                                     ball_mass=mass, sigma=sigma)
    inside = ball.contains(metric, m.points)
    w = m.weights.copy()
    w[inside] -= sigma * m.weights[inside] / mass
    w = np.clip(w, 0.0, None) / (1.0 - sigma)
    rest = FiniteMeasure._trusted(m.points, w / w.sum())
    return nu, rest


def split_vector(v: np.ndarray, ball_mask: np.ndarray, sigma: float, *, step=None, side=None):
    """Vector form of :func:`ball_split` on a finite state space; returns (nu, rest, ball_mass)."""
    mass = math.fsum(v[ball_mask])
    if mass <= sigma:
        raise InadmissibleSplitError(
            f"step {step}: ball mass {mass!r} does not exceed {sigma!r}",
            step=step, ball_mass=mass, sigma=sigma, side=side,
        )
    nu = np.where(ball_mask, v, 0.0) / mass
    rest = np.clip(v - sigma * nu, 0.0, None) / (1.0 - sigma)
    return nu, rest, mass


def _ball_mask(chain: ExactChain, ball_states) -> np.ndarray:
    mask = np.zeros(chain.n, dtype=bool)
    idx = np.asarray(list(ball_states), dtype=int)
    if idx.size == 0:
        raise InputError("ball_states must be nonempty")
    if idx.min() < 0 or idx.max() >= chain.n:
        raise InputError("ball_states index out of range")
    mask[idx] = True
    return mask


def _as_dist(chain: ExactChain, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (chain.n,) or np.any(v < 0) or abs(math.fsum(v) - 1.0) > 1e-12:
        raise InputError("expected a probability vector on the chain's states")
    return v


# -- certificates -------------------------------------------------------------------

@dataclass
class DecompositionCertificate:
    terms: list
    target: np.ndarray
    reconstruction_residual: float
    coefficient_sum: float
    ball_mass_witnesses: list
    split_masses: list
    nus: list = field(default_factory=list)

    def reconstruct(self) -> np.ndarray:
        return sum(t["coefficient"] * t["vector"] for t in self.terms)

    def to_dict(self) -> dict:
        return {
            "terms": [
                {"coefficient": t["coefficient"], "tag": t["tag"], "step": t["step"],
                 "vector": np.asarray(t["vector"]).tolist()}
                for t in self.terms
            ],
            "target": self.target.tolist(),
            "reconstruction_residual": self.reconstruction_residual,
            "coefficient_sum": self.coefficient_sum,
            "ball_mass_witnesses": self.ball_mass_witnesses,
            "split_masses": self.split_masses,
        }


def _certificate(terms, target, nus, mask, split_masses):
    recon = sum(t["coefficient"] * t["vector"] for t in terms)
    coef_sum = math.fsum(t["coefficient"] for t in terms)
    witnesses = [math.fsum(nu[mask]) for nu in nus]
    return DecompositionCertificate(
        terms=terms,
        target=target,
        reconstruction_residual=math.fsum(np.abs(recon - target)),
        coefficient_sum=coef_sum,
        ball_mass_witnesses=witnesses,
        split_masses=split_masses,
        nus=nus,
    )


def chain_decomposition(chain: ExactChain, start, ball_states, schedule: SigmaSchedule, times) -> DecompositionCertificate:
    """Split Q_{t_K}...Q_{t_1} start into sigma-weighted ball pieces plus a remainder.

    Step k applies Q_{t_k} to the previous remainder, splits off sigma_k of
    its ball mass, and the nu piece is then carried through the remaining
    Cesaro operators.  Raises :class:`InadmissibleSplitError` at the first
    step whose ball mass does not exceed sigma_k.
    """
    times = [int(t) for t in times]
    K = len(times)
    if K < 1 or K > schedule.K:
        raise InputError(f"need 1 <= len(times) <= schedule.K = {schedule.K}")
    if min(times) < 1:
        raise InputError("Cesaro times must be >= 1")
    mask = _ball_mask(chain, ball_states)
    rest = _as_dist(chain, start)
    nus, masses, terms = [], [], []
    survive = 1.0
    for k in range(1, K + 1):
        q = cesaro_vector(chain, rest, times[k - 1])
        nu, rest, mass = split_vector(q, mask, schedule[k], step=k)
        nus.append(nu)
        masses.append(mass)
        vec = nu
        for t in times[k:]:
            vec = cesaro_vector(chain, vec, t)
        terms.append({"coefficient": schedule[k] * survive, "vector": vec, "tag": "nu", "step": k})
        survive *= 1.0 - schedule[k]
    terms.append({"coefficient": survive, "vector": rest, "tag": "mu-remainder", "step": K})
    M = np.eye(chain.n)
    for t in times:
        M = M @ cesaro_matrix(chain, t)
    target = _as_dist(chain, start) @ M
    return _certificate(terms, target, nus, mask, masses)


def _telescope_one(chain, mu, mask, alpha, times, side):
    rest = _as_dist(chain, mu)
    nus, masses, terms = [], [], []
    K = len(times)
    for k in range(1, K + 1):
        q = rest @ np.linalg.matrix_power(chain.P, times[k - 1])
        nu, rest, mass = split_vector(q, mask, alpha, step=k, side=side)
        nus.append(nu)
        masses.append(mass)
        lag = sum(times[k:])
        vec = nu @ np.linalg.matrix_power(chain.P, lag)
        terms.append({"coefficient": alpha * (1 - alpha) ** (k - 1), "vector": vec, "tag": "nu", "step": k})
    terms.append({"coefficient": (1 - alpha) ** K, "vector": rest, "tag": "mu-remainder", "step": K})
    return terms, nus, masses


def telescoping_decomposition(chain: ExactChain, mu1, mu2, alpha: float, times, ball_states):
    """P^{t_1+...+t_K} mu_i = sum_k alpha(1-alpha)^{k-1} P^{t_{k+1}+...} nu_i^k + (1-alpha)^K mu_i^K."""
    if not (0 < alpha < 1):
        raise InputError("alpha must lie in (0, 1)")
    times = [int(t) for t in times]
    if not times or min(times) < 0:
        raise InputError("need a nonempty list of nonnegative times")
    mask = _ball_mask(chain, ball_states)
    total = sum(times)
    PT = np.linalg.matrix_power(chain.P, total)
    out = []
    for side, mu in ((1, mu1), (2, mu2)):
        terms, nus, masses = _telescope_one(chain, mu, mask, alpha, times, side)
        # target by repeated one-step products, independent of the block powers above
        target = _as_dist(chain, mu)
        for _ in range(total):
            target = target @ chain.P
        cert = _certificate(terms, target, nus, mask, masses)
        cert.reconstruction_residual = max(cert.reconstruction_residual,
                                           math.fsum(np.abs(cert.reconstruct() - _as_dist(chain, mu) @ PT)))
        out.append(cert)
    return out[0], out[1]


def ball_oscillation(chain: ExactChain, dictionary: np.ndarray, ball_states, horizon: int) -> float:
    """max over phi and 0 <= s <= horizon of the oscillation of P^s phi over the ball."""
    mask = _ball_mask(chain, ball_states)
    F = np.atleast_2d(np.asarray(dictionary, dtype=float)).T.copy()
    worst = 0.0
    for _ in range(horizon + 1):
        sub = F[mask]
        worst = max(worst, float(np.max(sub.max(axis=0) - sub.min(axis=0))))
        F = chain.P @ F
    return worst


def coupling_bound_check(chain: ExactChain, mu1, mu2, alpha: float, times, dictionary, ball_states) -> dict:
    """Check |<phi, P^t mu1> - <phi, P^t mu2>| <= eps_phi + 2(1-alpha)^k at t = t_1+...+t_k."""
    D = np.atleast_2d(np.asarray(dictionary, dtype=float))
    if D.shape[1] != chain.n:
        raise InputError("dictionary rows must be functions on the chain's states")
    if np.max(np.abs(D)) > 1 + 1e-12:
        raise InputError("dictionary functions must be bounded by 1")
    times = [int(t) for t in times]
    cert1, cert2 = telescoping_decomposition(chain, mu1, mu2, alpha, times, ball_states)
    eps_phi = ball_oscillation(chain, D, ball_states, sum(times))
    v1, v2 = _as_dist(chain, mu1), _as_dist(chain, mu2)
    rows = []
    elapsed = 0
    ok = True
    for k, t in enumerate(times, start=1):
        for _ in range(t):
            v1 = v1 @ chain.P
            v2 = v2 @ chain.P
        elapsed += t
        lhs = float(np.max(np.abs(D @ (v1 - v2))))
        rhs = eps_phi + 2.0 * (1.0 - alpha) ** k
        passed = lhs <= rhs + 1e-12
        ok &= passed
        rows.append({"k": k, "t": elapsed, "lhs": lhs, "rhs": rhs, "pass": bool(passed)})
    return {
        "eps_phi": eps_phi,
        "rows": rows,
        "lhs": max(r["lhs"] for r in rows),
        "rhs": rows[-1]["rhs"],
        "pass": bool(ok),
        "residuals": [cert1.reconstruction_residual, cert2.reconstruction_residual],
    }


def select_times(chain: ExactChain, K: int, threshold: float, t0: int = 1, t_max: int = 1 << 16) -> list:
    """Doubling search: t_{k+1} is the first power-of-two multiple of t_k whose composed gap < threshold."""
    times = [int(t0)]
    while len(times) < K:
        t = times[-1]
        while composed_cesaro_gap(chain, times, t) >= threshold:
            t *= 2
            if t > t_max:
                raise InputError(f"no time below {t_max} brings the composed gap under {threshold}")
        times.append(t)
    return times
