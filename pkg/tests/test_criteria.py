import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import halving_ifs, random_chain
from fellerkit.criteria import (INCONCLUSIVE, REFUTED, SUPPORTED, cauchy_diagnostic, dyadic_lebesgue,
                                e_property_probe, escape_certificate, exact_integrals, invariant_residual,
                                lower_bound_mass_estimate, stability_lower_bound_estimate,
                                uniform_compact_convergence)
from fellerkit.errors import InputError
from fellerkit.measure import ClippedCoordinate, FiniteMeasure, Tent, constant_function, dirac, prune
from fellerkit.semigroup import PrunePolicy, cesaro_average, evolve_exact, evolve_particles
from fellerkit.system import AffineMap, DiscreteIFS, ExactChain, ProbabilityField
from fellerkit.transport import fm_distance

CONST = ProbabilityField.constant
FLIP = ExactChain([[0.0, 1.0], [1.0, 0.0]])
TWO = ExactChain([[0.9, 0.1], [0.2, 0.8]])
DRIFT = DiscreteIFS([AffineMap.scalar(1.0, 1.0)], CONST([1.0]))
IDENT = DiscreteIFS([AffineMap.scalar(1.0)], CONST([1.0]))
LIP1 = [Tent((0.5,), 1.0), Tent((0.25,), 1.0), ClippedCoordinate(0)]


# -- lower bound ---------------------------------------------------------------------------

def test_lower_bound_halving_supported(halving):
    r = lower_bound_mass_estimate(halving, 0.5, 0.3, [[0.0]], 400, 200, particles=4000, seed=1)
    assert r.verdict == SUPPORTED and abs(r.estimates["min"] - 0.6) <= 0.05
    assert r.estimates["monotone_in_eps"]
    assert r.parameters["seed"] == 1 and r.caveats


def test_lower_bound_drift_refuted():
    r = lower_bound_mass_estimate(DRIFT, 0.0, 1.0, [[0.0]], 50, 10, particles=10, seed=0)
    assert r.verdict == REFUTED and r.estimates["min"] <= 0.2
    assert r.estimates["per_start"][0]["last_possible_visit"] == pytest.approx(1.0)
    assert r.estimates["escape_certificate"]["drift"] > 0


def test_lower_bound_chain_exact():
    r = lower_bound_mass_estimate(TWO, None, None, [0, 1], 200, 50, ball_states=[0])
    assert r.verdict == SUPPORTED and r.estimates["mode"] == "chain-exact"
    P = TWO.P
    v = np.array([1.0, 0.0])
    acc = 0.0
    for i in range(1, 201):
        v = v @ P
        acc += v[0]
    assert r.estimates["per_start"][0]["window_values"][-1] == pytest.approx(acc / 200, abs=1e-12)
    assert r.estimates["per_start"][0]["cesaro_limit"] == pytest.approx(2 / 3, abs=1e-12)
    trap = ExactChain([[0.5, 0.5], [0.0, 1.0]])
    assert lower_bound_mass_estimate(trap, None, None, [0], 50, 10, ball_states=[0]).verdict == REFUTED


def test_lower_bound_errors(halving):
    with pytest.raises(InputError):
        lower_bound_mass_estimate(halving, 0.5, 0.3, [[0.0]], 5, 10)
    with pytest.raises(InputError):
        lower_bound_mass_estimate(halving, 0.5, 0.3, [], 10, 5)


def test_lower_bound_from_initial_measure(halving):
    m0 = FiniteMeasure([[0.0], [1.0]], [0.5, 0.5])
    r = lower_bound_mass_estimate(halving, 0.5, 0.3, m0, 200, 100, particles=2000, seed=4)
    assert r.verdict == SUPPORTED and abs(r.estimates["min"] - 0.6) <= 0.05


# -- stability -------------------------------------------------------------------------------

def test_stability_halving(halving):
    grid = [[0.0], [0.25], [0.5], [0.75], [1.0]]
    r = stability_lower_bound_estimate(halving, 0.5, 0.3, grid, 60, particles=4000, seed=2)
    assert r.verdict == SUPPORTED and abs(r.estimates["inf"] - 0.6) <= 0.05
    assert all(abs(p["window_min"] - 0.6) <= 0.05 for p in r.estimates["per_start"])
    assert any("grid" in c for c in r.caveats)


def test_stability_chains():
    r = stability_lower_bound_estimate(TWO, None, None, [0, 1], 200, ball_states=[0])
    assert r.verdict == SUPPORTED
    for p in r.estimates["per_start"]:
        assert p["liminf"] == pytest.approx(2 / 3, abs=1e-12)
    r = stability_lower_bound_estimate(FLIP, None, None, [0, 1], 20, ball_states=[0])
    assert r.verdict == REFUTED and r.estimates["inf"] == 0.0
    assert sorted(r.estimates["per_start"][0]["phase_limits"]) == [0.0, 1.0]
    assert r.estimates["per_start"][0]["window_min"] == 0.0


def test_stability_drift_refuted():
    r = stability_lower_bound_estimate(DRIFT, 0.0, 1.0, [[0.0], [-3.0]], 20, particles=5)
    assert r.verdict == REFUTED


def test_escape_certificate():
    assert escape_certificate(halving_ifs()) is None
    assert escape_certificate(TWO) is None
    both = DiscreteIFS([AffineMap.scalar(1.0, 1.0), AffineMap.scalar(1.0, -1.0)], CONST([0.5, 0.5]))
    assert escape_certificate(both) is None
    plane = DiscreteIFS([AffineMap(np.eye(2), [1.0, 0.0]), AffineMap(np.eye(2), [0.0, 1.0])], CONST([0.5, 0.5]))
    cert = escape_certificate(plane)
    u = np.array(cert["direction"])
    assert u @ [1, 0] > 0 and u @ [0, 1] > 0


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=15)
def test_ball_hits_monotone_in_eps(seed):
    r = lower_bound_mass_estimate(halving_ifs(), 0.5, 0.2, [[0.0]], 30, 10, particles=200, seed=seed,
                                  eps_grid=[0.05, 0.1, 0.2, 0.4])
    vals = list(r.estimates["per_start"][0]["min_by_eps"].values())
    assert all(a <= b for a, b in zip(vals, vals[1:]))


# -- e-property -----------------------------------------------------------------------------

def test_e_property_constant_dictionary(halving):
    r = e_property_probe(halving, [constant_function(0.7)], [0.2], [0.5, 0.1], 5, mode="exact")
    assert np.all(r.estimates["M"] == 0.0) and r.verdict == SUPPORTED


def test_e_property_halving_exact(halving):
    radii = [0.5, 0.25, 0.1, 0.05, 0.01]
    r = e_property_probe(halving, LIP1, [0.3], radii, 12, mode="exact")
    M = r.estimates["M"]
    assert np.all(M <= np.asarray(radii) + 1e-12)
    np.testing.assert_allclose(M, np.asarray(radii) / 2, atol=1e-12)
    assert r.verdict == SUPPORTED and r.estimates["monotone_in_r"]


def test_e_property_sampler_matches_exact(halving):
    radii = [0.5, 0.2, 0.05]
    r = e_property_probe(halving, LIP1, [0.3], radii, 8, mode="sampler", particles=4000, seed=3)
    np.testing.assert_allclose(r.estimates["M"], np.asarray(radii) / 2, atol=0.02)
    assert r.verdict == SUPPORTED


def test_e_property_drift_supported_while_lower_bound_refuted():
    tent = [Tent((0.0,), 1.0)]
    radii = [0.5, 0.25, 0.125]
    e = e_property_probe(DRIFT, tent, [-1.0], radii, 6, mode="exact")
    assert np.all(e.estimates["M"] <= np.asarray(radii) + 1e-12) and e.verdict == SUPPORTED
    lb = lower_bound_mass_estimate(DRIFT, 0.0, 1.0, [[-1.0]], 20, 5, particles=5)
    assert lb.verdict == REFUTED


def test_e_property_errors(halving):
    with pytest.raises(InputError):
        e_property_probe(halving, LIP1, [0.0], [0.1, 0.2], 3)
    with pytest.raises(InputError):
        e_property_probe(TWO, LIP1, 0, [0.1], 3)
    with pytest.raises(InputError):
        e_property_probe(halving, LIP1, [0.0], [0.1], 3, mode="bogus")


# -- Cauchy diagnostic -----------------------------------------------------------------------

def test_cauchy_identity_is_zero():
    r = cauchy_diagnostic(IDENT, [0.4], LIP1, [2, 4, 8])
    assert np.all(np.asarray(r.estimates["D"]) == 0.0) and r.verdict == SUPPORTED


def test_cauchy_two_state_exact():
    D = np.eye(2)
    grid = [4, 8, 16, 32, 64]
    r = cauchy_diagnostic(TWO, 0, D, grid)
    P = TWO.P
    vs = [np.array([1.0, 0.0])]
    for _ in range(2 * grid[-1]):
        vs.append(vs[-1] @ P)
    Q = lambda n: np.mean(vs[1:n + 1], axis=0)
    for n in grid:
        ref = np.max(np.abs(Q(2 * n) - Q(n)))
        assert r.estimates["D_n_2n"][str(n)] == pytest.approx(ref, abs=1e-12)
        assert ref * n <= 1.0
    assert r.verdict == SUPPORTED


def test_cauchy_halving_exact(halving):
    r = cauchy_diagnostic(halving, [0.0], LIP1, [8, 16, 32, 64])
    vals = list(r.estimates["D_n_2n"].values())
    assert all(a > b for a, b in zip(vals, vals[1:])) and r.verdict == SUPPORTED


def test_cauchy_grid_validation(halving):
    with pytest.raises(InputError):
        cauchy_diagnostic(halving, [0.0], LIP1, [8])
    with pytest.raises(InputError):
        cauchy_diagnostic(halving, [0.0], LIP1, [8, 8])


# -- invariant residual and routes to mu* ----------------------------------------------------

def test_invariant_residual_examples(halving):
    m = FiniteMeasure([[0.0], [1.3], [-2.0]], [0.2, 0.3, 0.5])
    assert invariant_residual(IDENT, m) == pytest.approx(0.0, abs=1e-12)
    assert invariant_residual(halving, dirac([0.0])) == pytest.approx(0.25, abs=1e-9)
    assert invariant_residual(halving, dyadic_lebesgue(10)) <= 2.0**-10 + 1e-9


def test_dyadic_lebesgue():
    m = dyadic_lebesgue(3)
    np.testing.assert_array_equal(m.points[:, 0], (np.arange(8) + 0.5) / 8)
    assert m.mean()[0] == 0.5


def test_three_routes_to_invariant_measure(halving):
    oracle = dyadic_lebesgue(8)
    grid = 2.0**-8
    # (a) long Cesaro average of the exact evolution, merged onto a coarse grid
    trace = evolve_exact(halving, dirac([0.5]), 60, PrunePolicy(mass_floor=0.0, merge_radius=grid, budget=1.0))
    ces = prune(cesaro_average(trace.measures[1:]), 0.0, grid).measure
    # (b) particle cloud after many steps
    cloud = evolve_particles(halving, [0.5], 40, 20_000, seed=6, record_every=40)[-1]
    cloud = prune(cloud, 0.0, grid).measure
    routes = {"cesaro": ces, "particles": cloud, "dyadic": oracle}
    names = list(routes)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            assert fm_distance(routes[a], routes[b]).value <= 0.05, (a, b)


# -- uniform convergence ---------------------------------------------------------------------

def test_uniform_convergence_constant(halving):
    K = [[0.0], [1.0]]
    r = uniform_compact_convergence(halving, [constant_function(0.3)], K, dyadic_lebesgue(6), 5)
    assert np.all(r.estimates["sup"] == pytest.approx(0.0, abs=1e-15))


def test_uniform_convergence_halving(halving):
    K = [[x] for x in np.linspace(0, 1, 11)]
    r = uniform_compact_convergence(halving, [Tent((0.5,), 0.5)], K, dyadic_lebesgue(10), 14)
    sup = r.estimates["sup"]
    n = np.arange(15)
    # 1/0.5-Lipschitz tent: deviation <= 2 * (1/2)^n * diam + mesh error
    assert np.all(sup <= 2 * 0.5**n + 2 * 2.0**-10 + 1e-9)
    assert r.verdict == SUPPORTED


def test_uniform_convergence_two_state():
    r = uniform_compact_convergence(TWO, np.eye(2), [0, 1], [2 / 3, 1 / 3], 30)
    assert r.estimates["decay_rate"] == pytest.approx(0.7, abs=1e-6)
    sup = r.estimates["sup"]
    np.testing.assert_allclose(sup[1:] / sup[:-1], 0.7, atol=1e-9)


# -- chain agreement and determinism ------------------------------------------------------------

@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=25)
def test_chain_mode_matches_linear_algebra(seed):
    rng = np.random.default_rng(seed)
    chain = random_chain(rng, 5, density=0.6)
    r = stability_lower_bound_estimate(chain, None, None, [0, 3], 40, 10, ball_states=[1, 2])
    for p in r.estimates["per_start"]:
        v = np.zeros(5)
        v[p["start"]] = 1.0
        hist = []
        for _ in range(40):
            v = v @ chain.P
            hist.append(v[1] + v[2])
        assert abs(p["window_min"] - min(hist[-10:])) <= 1e-12
    c = cauchy_diagnostic(chain, 0, np.eye(5), [3, 6, 12])
    Pn = [np.linalg.matrix_power(chain.P, k)[0] for k in range(1, 25)]
    ref = np.max(np.abs(np.mean(Pn[:6], axis=0) - np.mean(Pn[:3], axis=0)))
    assert abs(c.estimates["D_n_2n"]["3"] - ref) <= 1e-12


def test_exact_integrals_prune_error_bound(halving):
    vals, err = exact_integrals(halving, dirac([0.0]), LIP1, 8)
    assert err == 0.0 and vals.shape == (9, 3)
    coarse, err = exact_integrals(halving, dirac([0.0]), LIP1, 8, prune_above=16, merge_radius=2.0**-4)
    assert err > 0 and np.max(np.abs(coarse - vals)) <= err + 1e-12


def test_reports_deterministic_across_workers(halving):
    def runs(workers):
        return [
            lower_bound_mass_estimate(halving, 0.5, 0.3, [[0.0], [1.0]], 40, 10, particles=999, seed=5,
                                      workers=workers).to_json(),
            stability_lower_bound_estimate(halving, 0.5, 0.3, [[0.1]], 30, particles=999, seed=5,
                                           workers=workers).to_json(),
            e_property_probe(halving, LIP1, [0.3], [0.2, 0.1], 6, particles=999, seed=5,
                             workers=workers).to_json(),
            cauchy_diagnostic(halving, [0.0], LIP1, [2, 4], mode="sampler", particles=999, seed=5,
                              workers=workers).to_json(),
        ]
    a, b, c = runs(1), runs(1), runs(3)
    assert a == b == c
    assert json.loads(a[0])["parameters"]["seed"] == 5
