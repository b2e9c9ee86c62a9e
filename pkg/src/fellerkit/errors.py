"""Exception taxonomy shared by every module and mapped onto CLI exit codes."""


class FellerError(Exception):
    """Base class for toolkit errors."""


class InputError(FellerError, ValueError):
    """Malformed arguments: dimension mismatch, bad coefficients, bad config."""


class NumericError(FellerError, ArithmeticError):
    """Overflow, non-finite output, or a solver/quadrature that missed its tolerance."""


class ResourceError(FellerError):
    """A support-size or pruning budget was exceeded; the caller must prune or shrink."""


class DegenerateError(FellerError):
    """The computation has no well-defined answer (empty measure, non-unique stationary law)."""


class InadmissibleSplitError(FellerError):
    """A ball split was requested with ball mass not exceeding the split weight.

    ``step`` is the 1-based construction step (``None`` for a standalone split)
    and ``deficit`` is ``sigma - ball_mass`` (nonnegative).
    """

    def __init__(self, message, *, step=None, ball_mass=None, sigma=None, side=None):
        super().__init__(message)
        self.step = step
        self.ball_mass = ball_mass
        self.sigma = sigma
        self.side = side

    @property
    def deficit(self):
        if self.ball_mass is None or self.sigma is None:
            return None
        return self.sigma - self.ball_mass

    def to_dict(self):
        return {
            "error": "inadmissible",
            "message": str(self),
            "step": self.step,
            "side": self.side,
            "ball_mass": self.ball_mass,
            "sigma": self.sigma,
            "deficit": self.deficit,
        }


class ConfigError(InputError):
    """A config document failed validation; ``path`` locates the offending field."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path
