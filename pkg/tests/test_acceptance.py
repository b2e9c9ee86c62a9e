"""Acceptance criteria 1-11, one test each, each printing a single PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (lines are printed even under
capture) or ``python3 tests/test_acceptance.py`` for the summary alone.
"""
import hashlib
import math
import sys
import time

import numpy as np
import pytest

from fellerkit.coupling import (chain_decomposition, coupling_bound_check, lemma_ineq_margin, lemma_threshold,
                                sigma_schedule, telescoping_decomposition)
from fellerkit.criteria import (REFUTED, SUPPORTED, dyadic_lebesgue, e_property_probe, lower_bound_mass_estimate,
                                stability_lower_bound_estimate)
from fellerkit.measure import ClippedCoordinate, FiniteMeasure, Tent, dirac, prune
from fellerkit.semigroup import NO_PRUNE, cesaro_tv_residual, composed_cesaro_gap, empirical_measure, evolve_exact, run_particles
from fellerkit.system import (AffineMap, DiscreteIFS, ExactChain, FlowSpec, JumpFlowSystem, ProbabilityField,
                              check_avg_contraction, check_flow_expansion, check_spectral_gap_condition)
from fellerkit.geometry import EUCLIDEAN, distance
from fellerkit.transport import fm_distance

SEED = 20240611
CONST = ProbabilityField.constant
HALVING_MAPS = [AffineMap.scalar(0.5), AffineMap.scalar(0.5, 0.5)]
HALVING = DiscreteIFS(HALVING_MAPS, CONST([0.5, 0.5]))


def random_chain(rng, n=5, min_entry=0.0):
    P = rng.random((n, n)) + min_entry
    P /= P.sum(axis=1, keepdims=True)
    P[:, -1] = 1.0 - P[:, :-1].sum(axis=1)
    return ExactChain(np.clip(P, 0, None))


def random_measure(rng, size):
    w = rng.random(size) + 0.05
    return FiniteMeasure(rng.uniform(-3, 3, size=(size, 2)), w / w.sum())


def admissible(rng):
    chain = random_chain(rng, min_entry=0.2)
    alpha = float(rng.uniform(0.1, 0.9)) * float(chain.P[:, 0].min())
    mu = rng.random((2, 5))
    return chain, alpha, mu[0] / mu[0].sum(), mu[1] / mu[1].sum()


def report(number, title, passed, detail, elapsed, limit):
    ok = passed and (limit is None or elapsed < limit)
    budget = f" (limit {limit:g}s)" if limit is not None else ""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}: {detail}; {elapsed:.2f}s{budget}"
    print(line, flush=True)
    return ok


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


# -- criterion bodies ----------------------------------------------------------------------------

def transport_exactness():
    rng = np.random.default_rng(SEED)
    worst_dirac = 0.0
    for _ in range(100):
        x, y = rng.uniform(-2, 2, size=(2, 2))
        fm = fm_distance(dirac(x), dirac(y)).value
        worst_dirac = max(worst_dirac, abs(fm - min(2.0, distance(EUCLIDEAN, x, y))))
    worst_axiom = 0.0
    for _ in range(100):
        a, b, c = (random_measure(rng, int(rng.integers(1, 21))) for _ in range(3))
        ab, ba = fm_distance(a, b).value, fm_distance(b, a).value
        ac, bc = fm_distance(a, c).value, fm_distance(b, c).value
        aa = fm_distance(a, a).value
        worst_axiom = max(worst_axiom, abs(aa), abs(ab - ba), ab - (ac + bc), -ab)
    passed = worst_dirac <= 1e-9 and worst_axiom <= 1e-8
    return passed, f"max Dirac error {worst_dirac:.1e} (tol 1e-9), max axiom violation {worst_axiom:.1e} (tol 1e-8)"


def coupling_identities():
    rng = np.random.default_rng(SEED + 2)
    worst_res, worst_sum = 0.0, 0.0
    for _ in range(100):
        chain, alpha, mu1, mu2 = admissible(rng)
        K = int(rng.integers(1, 6))
        times = [int(t) for t in rng.integers(1, 10, size=K)]
        certs = [chain_decomposition(chain, mu1, [0], sigma_schedule(alpha, 0.05, K), times),
                 *telescoping_decomposition(chain, mu1, mu2, alpha, times, [0])]
        for c in certs:
            worst_res = max(worst_res, c.reconstruction_residual)
            worst_sum = max(worst_sum, abs(c.coefficient_sum - 1))
    passed = worst_res <= 1e-12 and worst_sum <= 1e-12
    return passed, f"max residual {worst_res:.1e}, max |coef sum - 1| {worst_sum:.1e} (tol 1e-12)"


def lemma_certification():
    spot = lemma_ineq_margin(0.5, 1, 0.01)
    # 0.0802 is the rounded form of the closed-form value 0.495 / 0.505 - 0.9
    target = 0.495 / 0.505 - 0.9
    ok = abs(spot - target) <= 1e-6
    smallest = math.inf
    all_positive = True
    for a in [j / 10 for j in range(1, 10)]:
        for k in range(1, 6):
            t = lemma_threshold(a, k)
            smallest = min(smallest, t)
            below = np.logspace(math.log10(t) - 30, math.log10(t), 40)[:-1]
            all_positive &= t > 0 and all(lemma_ineq_margin(a, k, float(e)) > 0 for e in below)
    return ok and all_positive, (f"spot margin {spot:.7f} (target {target:.7f} +- 1e-6), margin > 0 below every threshold: "
                                 f"{all_positive}, smallest threshold {smallest:.2e}")


def cesaro_tv_bound():
    rng = np.random.default_rng(SEED + 4)
    worst = 0.0
    ok = True
    for _ in range(50):
        chain = random_chain(rng)
        z = int(rng.integers(5))
        for n in (10, 100, 1000, 10_000):
            r = cesaro_tv_residual(chain, z, n)
            ok &= r <= 2.0 / n
            worst = max(worst, r * n / 2)
    return ok, f"max residual / (2/n) = {worst:.3f} over 200 cases (must be <= 1)"


def composed_gap_trend():
    rng = np.random.default_rng(SEED + 5)
    ok, worst = True, 0.0
    for _ in range(20):
        chain = random_chain(rng, min_entry=0.01)
        g2, g4 = composed_cesaro_gap(chain, [3, 5], 100), composed_cesaro_gap(chain, [3, 5], 10_000)
        ok &= g4 < g2
        worst = max(worst, g4 / g2)
    return ok, f"max gap(T=1e4) / gap(T=1e2) = {worst:.4f} over 20 chains (must be < 1)"


def halving_particles(workers, seed=SEED):
    X = run_particles(HALVING, np.zeros((100_000, 1)), 50, seed, workers=workers)
    return X


def invariant_recovery(workers=1):
    exact = evolve_exact(HALVING, dirac([0.0]), 20, NO_PRUNE, keep="last")[-1]
    moment_err = abs(exact.mean()[0] - 0.5 * (1 - 2.0**-20))
    X = halving_particles(workers)
    emp = empirical_measure(X)
    mean_err = abs(emp.mean()[0] - 0.5)
    # merge to a 1e-3 grid; the pruning bound is added so the comparison stays rigorous
    pr = prune(emp, 0.0, 1e-3)
    fm = fm_distance(pr.measure, dyadic_lebesgue(10)).value + pr.fm_bound
    passed = moment_err <= 1e-12 and mean_err <= 0.01 and fm <= 0.05
    detail = (f"exact moment error {moment_err:.1e} (tol 1e-12), particle mean error {mean_err:.4f} (tol 0.01), "
              f"FM to dyadic oracle {fm:.4f} incl. merge bound (tol 0.05)")
    return passed, detail, X


def coupling_bound():
    rng = np.random.default_rng(SEED + 7)
    ok, tightest = True, -math.inf
    for _ in range(100):
        chain, alpha, mu1, mu2 = admissible(rng)
        k = int(rng.integers(1, 11))
        times = [int(t) for t in rng.integers(1, 6, size=k)]
        D = rng.uniform(-1, 1, size=(6, 5))
        r = coupling_bound_check(chain, mu1, mu2, alpha, times, D, [0])
        ok &= r["pass"]
        tightest = max(tightest, max(row["lhs"] - row["rhs"] for row in r["rows"]))
    return ok, f"max (lhs - rhs) = {tightest:.3e} over 100 instances (must be <= 1e-12)"


def e_property_transfer():
    radii = [0.5, 0.25, 0.1, 0.01, 0.001]
    dictionary = [Tent((0.5,), 1.0), Tent((0.1,), 1.0), ClippedCoordinate(0)]
    worst = 0.0
    for x in (0.0, 0.3, 0.9):
        rep = e_property_probe(HALVING, dictionary, [x], radii, 12, mode="exact")
        worst = max(worst, float(np.max(rep.estimates["M"] / np.asarray(radii))))
    return worst <= 1 + 1e-12, f"max M(r)/r = {worst:.4f} over 3 base points, n <= 12 (must be <= 1)"


def criterion_discrimination(workers=1):
    lb = lower_bound_mass_estimate(HALVING, 0.5, 0.3, [[0.0]], 1000, 500, particles=4000, seed=SEED,
                                   workers=workers)
    drift = DiscreteIFS([AffineMap.scalar(1.0, 1.0)], CONST([1.0]))
    dr = lower_bound_mass_estimate(drift, 0.0, 1.0, [[0.0]], 100, 50, particles=100, seed=SEED, workers=workers)
    flip = ExactChain([[0.0, 1.0], [1.0, 0.0]])
    st = stability_lower_bound_estimate(flip, None, None, [0, 1], 100, ball_states=[0])
    est = lb.estimates["min"]
    passed = (lb.verdict == SUPPORTED and abs(est - 0.6) <= 0.05 and dr.verdict == REFUTED
              and st.verdict == REFUTED)
    detail = (f"halving {lb.verdict} with estimate {est:.4f} (target 0.6 +- 0.05), drift {dr.verdict}, "
              f"periodic chain {st.verdict}")
    return passed, detail, [lb.to_json(), dr.to_json(), st.to_json()]


def jumpflow_sanity(workers=1):
    jf = JumpFlowSystem(FlowSpec((0.2,)), 1.0, HALVING_MAPS, CONST([0.5, 0.5]))
    rng = np.random.default_rng(SEED)
    r = check_avg_contraction(jf, 1000, rng)["r"]
    kappa = check_flow_expansion(jf.flow, 1000, rng)["kappa"]
    balance = check_spectral_gap_condition(r, kappa, jf.gamma)
    q = {}

    def observe(k, X):
        if k in (100, 1000):
            q[k] = float(np.quantile(np.linalg.norm(X, axis=1), 0.99))

    X = run_particles(jf, np.ones((10_000, 1)), 1000, SEED, workers=workers, observer=observe)
    rel = abs(q[1000] - q[100]) / q[100]
    passed = balance["pass"] and abs(balance["value"] - 0.7) <= 1e-9 and rel <= 0.10
    detail = (f"r + kappa/gamma = {balance['value']:.4f} ({'pass' if balance['pass'] else 'fail'}), "
              f"p99 |Phi| {q[100]:.4f} at n=100 vs {q[1000]:.4f} at n=1000, relative change {rel:.3f} (tol 0.10)")
    return passed, detail, X


def digest(*parts):
    h = hashlib.sha256()
    for p in parts:
        h.update(np.ascontiguousarray(p).tobytes() if isinstance(p, np.ndarray) else str(p).encode())
    return h.hexdigest()


def monte_carlo_hash(workers):
    _, _, X6 = invariant_recovery(workers)
    _, _, reports = criterion_discrimination(workers)
    _, _, X10 = jumpflow_sanity(workers)
    return digest(X6, *reports, X10)


def determinism():
    hashes = [monte_carlo_hash(1), monte_carlo_hash(1), monte_carlo_hash(4)]
    return len(set(hashes)) == 1, f"hashes (1 worker, 1 worker, 4 workers) all {hashes[0][:16]}: {len(set(hashes)) == 1}"


# -- tests -------------------------------------------------------------------------------------

CRITERIA = {
    1: ("transport exactness", lambda: transport_exactness(), 10),
    2: ("coupling identities", lambda: coupling_identities(), 10),
    3: ("lemma inequality certification", lambda: lemma_certification(), 5),
    4: ("Cesaro TV bound", lambda: cesaro_tv_bound(), 10),
    5: ("composed Cesaro trend", lambda: composed_gap_trend(), 30),
    6: ("invariant-measure recovery", lambda: invariant_recovery()[:2], 60),
    7: ("coupling bound", lambda: coupling_bound(), 20),
    8: ("e-property transfer", lambda: e_property_transfer(), 20),
    9: ("criterion discrimination", lambda: criterion_discrimination()[:2], 60),
    10: ("jump-flow sanity", lambda: jumpflow_sanity()[:2], 60),
    11: ("determinism across worker counts", lambda: determinism(), None),
}


def check(number):
    title, body, limit = CRITERIA[number]
    (passed, detail), elapsed = timed(body)
    return report(number, title, passed, detail, elapsed, limit)


@pytest.mark.parametrize("number", sorted(CRITERIA), ids=lambda n: f"criterion_{n:02d}")
def test_acceptance(number, capsys):
    with capsys.disabled():
        print()
        passed = check(number)
    assert passed


if __name__ == "__main__":
    results = [check(n) for n in sorted(CRITERIA)]
    print(f"{sum(results)}/{len(results)} acceptance criteria passed")
    sys.exit(0 if all(results) else 1)
