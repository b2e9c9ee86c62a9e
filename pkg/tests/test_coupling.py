import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_chain, random_measure
from fellerkit.coupling import (ball_oscillation, ball_split, chain_decomposition, coupling_bound_check,
                                lemma_ineq_margin, lemma_threshold, select_times, sigma_schedule,
                                telescoping_decomposition)
from fellerkit.errors import InadmissibleSplitError, InputError
from fellerkit.geometry import Ball
from fellerkit.measure import FiniteMeasure, mixture
from fellerkit.semigroup import composed_cesaro, composed_cesaro_gap
from fellerkit.system import ExactChain
from oracles import margin_mp

seeds = st.integers(0, 2**32 - 1)
ALPHAS = [a / 10 for a in range(1, 10)]

# mpmath evaluations at 50 digits, frozen
FROZEN_MARGINS = {
    (0.5, 1, 0.01): 0.0801980198019802,
    (0.9, 3, 1e-20): 4.183061427113906e-06,
    (0.3, 5, 1e-6): -0.006494170592163153,
    (0.7, 2, 1e-4): 0.0018199593073634235,
}


def admissible_instance(rng, n=5):
    """Chain whose column 0 is bounded below, so ball {0} carries that much mass after any step."""
    chain = random_chain(rng, n, min_entry=0.2)
    floor = float(chain.P[:, 0].min())
    alpha = float(rng.uniform(0.1, 0.9)) * floor
    mu1, mu2 = rng.random(n), rng.random(n)
    return chain, alpha, mu1 / mu1.sum(), mu2 / mu2.sum()


def test_sigma_schedule_examples():
    s = sigma_schedule(0.5, 0.01, 2)
    assert s[1] == pytest.approx(0.495, abs=1e-15) and s[2] == pytest.approx(0.4455, abs=1e-15)
    tiny = sigma_schedule(0.5, 1e-300, 4)
    assert all(abs(x - 0.5) < 1e-12 for x in tiny.sigmas)
    s = sigma_schedule(0.9, 0.25, 3)
    assert s[1] > s[2] > s[3]
    for bad in ((0.0, 0.1, 2), (1.0, 0.1, 2), (0.5, 0.0, 2), (0.5, 1.0, 2), (0.5, 0.1, 0)):
        with pytest.raises(InputError):
            sigma_schedule(*bad)


@given(alpha=st.floats(0.01, 0.99), eps=st.floats(1e-6, 0.99), K=st.integers(1, 12))
def test_sigma_schedule_invariants(alpha, eps, K):
    s = sigma_schedule(alpha, eps, K)
    assert 0 < s.sigmas[-1] and s.sigmas[0] < alpha
    assert all(a > b for a, b in zip(s.sigmas, s.sigmas[1:]))
    direct = alpha * math.prod(1 - eps ** (1 / j) for j in range(1, K + 1))
    assert s[K] == pytest.approx(direct, rel=1e-12)


def test_margin_examples():
    assert lemma_ineq_margin(0.5, 1, 0.01) == pytest.approx(0.495 / 0.505 - 0.9, abs=1e-15)
    for (a, k, e), v in FROZEN_MARGINS.items():
        assert lemma_ineq_margin(a, k, e) == pytest.approx(v, rel=1e-9, abs=1e-15)
    # tends to 0 from above
    vals = [lemma_ineq_margin(0.5, 2, e) for e in (1e-40, 1e-80, 1e-160)]
    assert all(v > 0 for v in vals) and vals[0] > vals[1] > vals[2]
    with pytest.raises(InputError):
        lemma_ineq_margin(0.5, 0, 0.1)


@given(alpha=st.floats(0.05, 0.95), k=st.integers(1, 6), e=st.floats(1e-30, 0.5))
def test_margin_matches_high_precision(alpha, k, e):
    ref = margin_mp(alpha, k, e)
    assert abs(lemma_ineq_margin(alpha, k, e) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_threshold_on_grid():
    for a in ALPHAS:
        for k in range(1, 6):
            t = lemma_threshold(a, k)
            assert t > 0
            for e in np.logspace(math.log10(t) - 40, math.log10(t), 15)[:-1]:
                assert lemma_ineq_margin(a, k, float(e)) > 0
                assert margin_mp(a, k, float(e)) > 0
            if t < 0.5:
                # crossing is real: the margin goes nonpositive just above the threshold
                assert margin_mp(a, k, t * 1.001) <= 0


def test_threshold_far_below_default_interval():
    assert lemma_threshold(0.9, 5) < 1e-40


def test_ball_split_examples():
    m = FiniteMeasure([[0.0], [0.5]], [0.4, 0.6])
    nu, rest = ball_split(m, Ball((0.0,), 1.0), 0.3)
    assert nu.allclose(m, 1e-15) and rest.allclose(m, 1e-15)
    m = FiniteMeasure([[0.0], [5.0]], [0.5, 0.5])
    nu, rest = ball_split(m, Ball((0.0,), 1.0), 0.3)
    assert nu.allclose(FiniteMeasure([[0.0]], [1.0]), 0.0)
    assert rest.allclose(FiniteMeasure([[0.0], [5.0]], [2 / 7, 5 / 7]), 1e-15)
    nu, rest = ball_split(m, Ball((0.0,), 1.0), 0.0)
    assert rest.allclose(m, 0.0)
    with pytest.raises(InadmissibleSplitError) as exc:
        ball_split(m, Ball((0.0,), 1.0), 0.6)
    assert exc.value.deficit == pytest.approx(0.1)
    with pytest.raises(InputError):
        ball_split(m, Ball((0.0,), 1.0), 1.0)


@given(seed=seeds)
def test_ball_split_round_trip(seed):
    rng = np.random.default_rng(seed)
    m = random_measure(rng, 8)
    ball = Ball((float(rng.uniform(-2, 2)),), float(rng.uniform(0.5, 3.0)))
    inside = np.abs(m.points[:, 0] - ball.center[0]) <= ball.radius
    mass = float(m.weights[inside].sum())
    if mass <= 0:
        return
    sigma = float(rng.uniform(0, 0.99)) * mass
    nu, rest = ball_split(m, ball, sigma)
    assert np.all(np.abs(nu.points[:, 0] - ball.center[0]) <= ball.radius)
    assert mixture([(sigma, nu), (1 - sigma, rest)]).allclose(m, 1e-12)


def test_chain_decomposition_examples(two_state):
    sched = sigma_schedule(0.5, 0.05, 3)
    cert = chain_decomposition(two_state, [1.0, 0.0], [0], sched, [5, 5, 5])
    assert cert.reconstruction_residual <= 1e-12
    np.testing.assert_allclose(cert.target, composed_cesaro(two_state, [1.0, 0.0], [5, 5, 5]), atol=1e-15)
    one = chain_decomposition(two_state, [0.5, 0.5], [0], sigma_schedule(0.5, 0.05, 1), [4])
    q = composed_cesaro(two_state, [0.5, 0.5], [4])
    s1 = sched[1]
    np.testing.assert_allclose(one.terms[0]["vector"], [1.0, 0.0])
    np.testing.assert_allclose(one.terms[1]["vector"], (q - s1 * np.array([1.0, 0.0])) / (1 - s1), atol=1e-15)
    trap = ExactChain([[0.0, 1.0], [0.0, 1.0]])
    with pytest.raises(InadmissibleSplitError) as exc:
        chain_decomposition(trap, [1.0, 0.0], [0], sched, [5, 5, 5])
    assert exc.value.step == 1 and exc.value.deficit == pytest.approx(sched[1])
    with pytest.raises(InputError):
        chain_decomposition(two_state, [1.0, 0.0], [0], sched, [5, 5, 5, 5])
    with pytest.raises(InputError):
        chain_decomposition(two_state, [1.0, 0.0], [], sched, [5])


def test_telescoping_examples(two_state):
    c1, c2 = telescoping_decomposition(two_state, [1.0, 0.0], [0.0, 1.0], 0.3, [3], [0])
    assert [t["coefficient"] for t in c1.terms] == [0.3, 0.7]
    for k in range(1, 8):
        a, _ = telescoping_decomposition(two_state, [1.0, 0.0], [0.0, 1.0], 0.05, [2] * k, [0])
        coeffs = [t["coefficient"] for t in a.terms]
        assert coeffs == [0.05 * 0.95**j for j in range(k)] + [0.95**k]
        assert abs(a.coefficient_sum - 1) <= 1e-12


def test_telescoping_heavy_ball(rng):
    chain = random_chain(rng, min_entry=0.0)
    P = chain.P.copy()
    P[:, 2] += 3.0
    P /= P.sum(axis=1, keepdims=True)
    P[:, -1] = 1 - P[:, :-1].sum(axis=1)
    chain = ExactChain(P)
    from fellerkit.system import chain_stationary
    alpha = 0.5 * float(P[:, 2].min())
    mu = np.eye(5)
    c1, c2 = telescoping_decomposition(chain, mu[0], mu[4], alpha, [2, 3, 1, 4], [2])
    assert c1.reconstruction_residual <= 1e-12 and c2.reconstruction_residual <= 1e-12
    assert chain_stationary(chain)[2] > 2 * alpha


def check_certificate(cert, mask):
    coeffs = np.array([t["coefficient"] for t in cert.terms])
    assert np.all(coeffs >= 0) and abs(cert.coefficient_sum - 1) <= 1e-12
    assert cert.reconstruction_residual <= 1e-12
    assert np.all(np.abs(cert.reconstruct() - cert.target).sum() <= 1e-12)
    for nu in cert.nus:
        assert np.all(nu[~mask] == 0.0)
    assert all(abs(w - 1) <= 1e-12 for w in cert.ball_mass_witnesses)


@given(seed=seeds)
def test_decomposition_certificates(seed):
    rng = np.random.default_rng(seed)
    chain, alpha, mu1, mu2 = admissible_instance(rng)
    mask = np.zeros(5, dtype=bool)
    mask[0] = True
    K = int(rng.integers(1, 6))
    times = [int(t) for t in rng.integers(1, 8, size=K)]
    sched = sigma_schedule(alpha, float(rng.uniform(0.01, 0.5)), K)
    check_certificate(chain_decomposition(chain, mu1, [0], sched, times), mask)
    for cert in telescoping_decomposition(chain, mu1, mu2, alpha, times, [0]):
        check_certificate(cert, mask)


def test_coupling_bound_examples(two_state):
    D = np.array([[1.0, -1.0], [0.5, 0.0]])
    r = coupling_bound_check(two_state, [0.3, 0.7], [0.3, 0.7], 0.05, [1, 2, 3], D, [0])
    assert r["lhs"] == 0.0 and r["pass"]
    r = coupling_bound_check(two_state, [1.0, 0.0], [0.0, 1.0], 0.05, [1] * 10, D, [0])
    assert r["eps_phi"] == 0.0 and r["pass"]
    for row in r["rows"]:
        assert row["lhs"] <= 2 * 0.95 ** row["k"] + 1e-12
    with pytest.raises(InputError):
        coupling_bound_check(two_state, [1.0, 0.0], [0.0, 1.0], 0.05, [1], 2 * D, [0])


def test_ball_oscillation_uses_evolved_functions(two_state):
    D = np.array([[1.0, 0.0]])
    assert ball_oscillation(two_state, D, [0, 1], 0) == 1.0
    assert ball_oscillation(two_state, D, [0], 5) == 0.0


@given(seed=seeds)
def test_coupling_bound_random(seed):
    rng = np.random.default_rng(seed)
    chain, alpha, mu1, mu2 = admissible_instance(rng)
    D = rng.uniform(-1, 1, size=(4, 5))
    ball = [0] if rng.random() < 0.5 else [0, int(rng.integers(1, 5))]
    times = [int(t) for t in rng.integers(1, 5, size=int(rng.integers(1, 11)))]
    r = coupling_bound_check(chain, mu1, mu2, alpha, times, D, ball)
    assert r["pass"] and max(r["residuals"]) <= 1e-12


def test_select_times(two_state):
    times = select_times(two_state, 3, 0.05, t0=8)
    assert times[0] == 8 and len(times) == 3
    for k in range(1, 3):
        assert composed_cesaro_gap(two_state, times[:k], times[k]) < 0.05
        assert times[k] % times[k - 1] == 0
    with pytest.raises(InputError):
        select_times(two_state, 2, 1e-9, t_max=64)
