"""Simulation and verification toolkit for Markov-Feller operators on finite-support measures."""

__version__ = "0.1.0"

from .errors import (ConfigError, DegenerateError, FellerError, InadmissibleSplitError, InputError, NumericError,
                     ResourceError)
from .geometry import EUCLIDEAN, Ball, MetricSpec, distance, in_ball
from .kernels import BACKEND
from .measure import FiniteMeasure, dirac, mixture, prune, pushforward, restrict_normalize, tv_distance
from .system import AffineMap, DiscreteIFS, ExactChain, FlowSpec, JumpFlowSystem, ProbabilityField
from .transport import fm_distance, w1_distance_1d

__all__ = [
    "BACKEND", "EUCLIDEAN", "AffineMap", "Ball", "ConfigError", "DegenerateError", "DiscreteIFS", "ExactChain",
    "FellerError", "FiniteMeasure", "FlowSpec", "InadmissibleSplitError", "InputError", "JumpFlowSystem",
    "MetricSpec", "NumericError", "ProbabilityField", "ResourceError", "dirac", "distance", "fm_distance",
    "in_ball", "mixture", "prune", "pushforward", "restrict_normalize", "tv_distance", "w1_distance_1d",
]
