import numpy as np
import pytest
from hypothesis import settings

from fellerkit.measure import FiniteMeasure
from fellerkit.system import AffineMap, DiscreteIFS, ExactChain, ProbabilityField

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_chain(rng, n=5, density=1.0, min_entry=0.0):
    """Row-stochastic matrix; ``density`` < 1 zeroes entries but keeps the diagonal."""
    P = rng.random((n, n)) + min_entry
    if density < 1:
        P *= rng.random((n, n)) < density
        P[np.arange(n), np.arange(n)] += 1e-3
    P /= P.sum(axis=1, keepdims=True)
    # exact row sums after the division
    P[:, -1] = 1.0 - P[:, :-1].sum(axis=1)
    return ExactChain(np.clip(P, 0, None))


def random_measure(rng, size, dim=1, scale=3.0, dyadic=False):
    if dyadic:
        pts = rng.integers(-64, 64, size=(size, dim)) / 16.0
    else:
        pts = rng.uniform(-scale, scale, size=(size, dim))
    w = rng.random(size) + 0.05
    return FiniteMeasure(pts, w / w.sum())


def halving_ifs():
    return DiscreteIFS([AffineMap.scalar(0.5), AffineMap.scalar(0.5, 0.5)], ProbabilityField.constant([0.5, 0.5]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def halving():
    return halving_ifs()


@pytest.fixture
def two_state():
    return ExactChain([[0.9, 0.1], [0.2, 0.8]])
