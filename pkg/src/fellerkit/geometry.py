"""Points, metrics and open balls on R^d."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

METRIC_KINDS = ("euclidean", "chebyshev", "truncated")


def as_point(p, dim: int | None = None) -> np.ndarray:
    """Coerce ``p`` to a finite 1-D float array (a scalar becomes a 1-vector)."""
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    if arr.ndim != 1:
        raise InputError(f"point must be a vector, got shape {arr.shape}")
    if arr.size == 0:
        raise InputError("point must have dimension >= 1")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"point has non-finite coordinates: {arr.tolist()}")
    if dim is not None and arr.size != dim:
        raise InputError(f"dimension mismatch: expected {dim}, got {arr.size}")
    return arr


@dataclass(frozen=True)
class MetricSpec:
    kind: str = "euclidean"
    cap: float | None = None

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise InputError(f"unknown metric kind {self.kind!r}")
        if self.kind == "truncated":
            if self.cap is None or not (self.cap > 0) or not np.isfinite(self.cap):
                raise InputError("truncated metric requires a positive finite cap")
        elif self.cap is not None:
            raise InputError(f"cap is only valid for the truncated metric, not {self.kind!r}")

    def pairwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Distances between rows of ``X`` (n, d) and ``Y`` (m, d) as an (n, m) array."""
        diff = X[:, None, :] - Y[None, :, :]
        return self._reduce(diff)

    def rowwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Distances between matching rows of two (n, d) arrays."""
        return self._reduce(X - Y)

    def _reduce(self, diff: np.ndarray) -> np.ndarray:
        if self.kind == "chebyshev":
            return np.max(np.abs(diff), axis=-1)
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        if self.kind == "truncated":
            dist = np.minimum(dist, self.cap)
        return dist

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.cap is not None:
            out["cap"] = self.cap
        return out

    @classmethod
    def from_dict(cls, data: dict | None) -> "MetricSpec":
        if data is None:
            return cls()
        return cls(kind=data.get("kind", "euclidean"), cap=data.get("cap"))


EUCLIDEAN = MetricSpec("euclidean")


def distance(metric: MetricSpec, p, q) -> float:
    p = as_point(p)
    q = as_point(q, p.size)
    return float(metric.rowwise(p[None, :], q[None, :])[0])


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        self.center.setflags(write=False)
        if not (self.radius > 0):
            raise InputError(f"ball radius must be positive, got {self.radius}")

    @property
    def dim(self) -> int:
        return self.center.size

    def contains(self, metric: MetricSpec, points: np.ndarray) -> np.ndarray:
        """Vectorised open-ball membership for an (n, d) array of points."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[None, :]
        if points.shape[1] != self.dim:
            raise InputError(f"dimension mismatch: ball in R^{self.dim}, points in R^{points.shape[1]}")
        return metric.rowwise(points, np.broadcast_to(self.center, points.shape)) < self.radius


def in_ball(metric: MetricSpec, ball: Ball, p) -> bool:
    p = as_point(p, ball.dim)
    return bool(distance(metric, ball.center, p) < ball.radius)
