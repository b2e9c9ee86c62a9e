"""Finite-support probability measures and test functions.

A :class:`FiniteMeasure` stores its atoms in canonical (lexicographic) order
with duplicates merged, so two measures built from the same atoms compare
equal array-for-array regardless of construction order.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

import numpy as np

from . import kernels
from .errors import DegenerateError, InputError, NumericError
from .geometry import EUCLIDEAN, Ball, MetricSpec, as_point

ATOM_TOL = 1e-12
MASS_TOL = 1e-9
RENORM_TOL = 1e-12

_METRIC_CODES = {"euclidean": 0, "chebyshev": 1, "truncated": 2}


def _canonical(points: np.ndarray, weights: np.ndarray, tol: float = ATOM_TOL):
    """Sort atoms lexicographically and merge runs closer than ``tol`` (max-abs)."""
    n = points.shape[0]
    if n == 0:
        return points, weights
    order = np.lexsort(points.T[::-1])
    points = points[order]
    weights = weights[order]
    if n == 1:
        return points, weights
    gap = np.max(np.abs(np.diff(points, axis=0)), axis=1)
    starts = np.concatenate(([True], gap >= tol))
    if starts.all():
        return points, weights
    group = np.cumsum(starts) - 1
    merged = np.zeros(int(group[-1]) + 1)
    np.add.at(merged, group, weights)
    return points[starts], merged


class FiniteMeasure:
    """Probability measure with finitely many atoms in R^d."""

    __slots__ = ("points", "weights", "empty")

    def __init__(self, points, weights, *, renormalize: bool = True):
        pts = np.asarray(points, dtype=float)
        w = np.asarray(weights, dtype=float).ravel()
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] != w.size:
            raise InputError(f"points {pts.shape} and weights {w.shape} do not align")
        if pts.shape[1] < 1:
            raise InputError("dimension must be >= 1")
        if w.size == 0:
            raise DegenerateError("a probability measure needs at least one atom")
        if not np.all(np.isfinite(pts)):
            raise InputError("atom coordinates must be finite")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("weights must be finite and nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise InputError(f"weights sum to {total!r}, not 1")
        keep = w > 0
        pts, w = _canonical(pts[keep], w[keep])
        if renormalize and abs(w.sum() - 1.0) > RENORM_TOL:
            w = w / w.sum()
        self._freeze(pts, w)
        self.empty = False

    def _freeze(self, pts, w):
        pts = np.ascontiguousarray(pts)
        w = np.ascontiguousarray(w)
        pts.setflags(write=False)
        w.setflags(write=False)
        self.points = pts
        self.weights = w

    @classmethod
    def _trusted(cls, points, weights, *, merge: bool = True) -> "FiniteMeasure":
        """Fast constructor for internally generated atoms (no sum check)."""
        obj = cls.__new__(cls)
        pts = np.asarray(points, dtype=float)
        w = np.asarray(weights, dtype=float)
        if merge:
            keep = w > 0
            pts, w = _canonical(pts[keep], w[keep])
        obj._freeze(pts, w)
        obj.empty = False
        return obj

    @classmethod
    def empty_measure(cls, dim: int) -> "FiniteMeasure":
        """The flagged zero measure returned by a restriction to a null ball."""
        obj = cls.__new__(cls)
        obj._freeze(np.zeros((0, dim)), np.zeros(0))
        obj.empty = True
        return obj

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.weights.size

    def __len__(self):
        return self.size

    def __iter__(self):
        for p, w in zip(self.points, self.weights):
            yield p, float(w)

    def __repr__(self):
        if self.empty:
            return f"FiniteMeasure(empty, dim={self.dim})"
        if self.size <= 6:
            atoms = ", ".join(f"({p.tolist() if self.dim > 1 else p[0]!r}, {w:.6g})" for p, w in self)
            return f"FiniteMeasure([{atoms}])"
        return f"FiniteMeasure(<{self.size} atoms in R^{self.dim}>)"

    def total_mass(self) -> float:
        return math.fsum(self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def validate(self) -> None:
        """Raise ``AssertionError`` if any FiniteMeasure invariant is broken."""
        if self.empty:
            assert self.size == 0
            return
        assert self.size >= 1
        assert np.all(np.isfinite(self.points))
        assert np.all(self.weights >= 0)
        assert abs(self.total_mass() - 1.0) <= MASS_TOL, self.total_mass()
        if self.size > 1:
            gap = np.max(np.abs(np.diff(self.points, axis=0)), axis=1)
            assert np.all(gap >= ATOM_TOL), "duplicate atoms"

    def allclose(self, other: "FiniteMeasure", atol: float = 1e-12) -> bool:
        """Atom-by-atom equality of weights on the union support."""
        _, a, b = align(self, other)
        return bool(np.max(np.abs(a - b), initial=0.0) <= atol)

    # -- serialisation ------------------------------------------------------
    def to_dict(self) -> dict:
        return {"atoms": [[p.tolist(), float(w)] for p, w in self]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "FiniteMeasure":
        try:
            atoms = data["atoms"]
            pts = [np.atleast_1d(np.asarray(p, dtype=float)) for p, _ in atoms]
            w = [float(x) for _, x in atoms]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed measure JSON: {exc}") from exc
        return cls(np.vstack(pts), w)

    @classmethod
    def from_json(cls, text: str) -> "FiniteMeasure":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x_{i + 1}" for i in range(self.dim)] + ["weight"])
        for p, w in self:
            writer.writerow([repr(float(c)) for c in p] + [repr(w)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FiniteMeasure":
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array(rows[1:], dtype=float)
        return cls(data[:, :-1], data[:, -1])


def align(m1: FiniteMeasure, m2: FiniteMeasure):
    """Union support and the two weight vectors on it."""
    if m1.dim != m2.dim:
        raise InputError(f"dimension mismatch: {m1.dim} vs {m2.dim}")
    pts = np.vstack([m1.points, m2.points])
    tag = np.concatenate([np.zeros(m1.size, dtype=int), np.ones(m2.size, dtype=int)])
    w = np.concatenate([m1.weights, m2.weights])
    if pts.shape[0] == 0:
        return pts, np.zeros(0), np.zeros(0)
    order = np.lexsort(pts.T[::-1])
    pts, tag, w = pts[order], tag[order], w[order]
    if pts.shape[0] > 1:
        gap = np.max(np.abs(np.diff(pts, axis=0)), axis=1)
        starts = np.concatenate(([True], gap >= ATOM_TOL))
    else:
        starts = np.array([True])
    group = np.cumsum(starts) - 1
    k = int(group[-1]) + 1
    a = np.zeros(k)
    b = np.zeros(k)
    np.add.at(a, group[tag == 0], w[tag == 0])
    np.add.at(b, group[tag == 1], w[tag == 1])
    return pts[starts], a, b


def dirac(p) -> FiniteMeasure:
    p = as_point(p)
    return FiniteMeasure._trusted(p[None, :], np.ones(1), merge=False)


def mixture(terms: Iterable[tuple[float, FiniteMeasure]]) -> FiniteMeasure:
    terms = list(terms)
    if not terms:
        raise InputError("mixture needs at least one term")
    coefs = np.array([float(c) for c, _ in terms])
    if np.any(coefs < 0) or not np.all(np.isfinite(coefs)):
        raise InputError("mixture coefficients must be finite and nonnegative")
    if abs(math.fsum(coefs) - 1.0) > MASS_TOL:
        raise InputError(f"mixture coefficients sum to {math.fsum(coefs)!r}, not 1")
    dims = {m.dim for _, m in terms}
    if len(dims) != 1:
        raise InputError(f"mixture of measures with different dimensions {sorted(dims)}")
    parts = [(c, m) for c, m in terms if c > 0 and not m.empty]
    pts = np.vstack([m.points for _, m in parts])
    w = np.concatenate([c * m.weights for c, m in parts])
    return _renormalized(pts, w)


def _renormalized(pts, w) -> FiniteMeasure:
    out = FiniteMeasure._trusted(pts, w)
    total = out.weights.sum()
    if abs(total - 1.0) > RENORM_TOL:
        out = FiniteMeasure._trusted(out.points, out.weights / total, merge=False)
    return out


def pushforward(m: FiniteMeasure, fmap: Callable) -> FiniteMeasure:
    """Image measure of ``m`` under ``fmap``.

    ``fmap`` may be a batched callable on (n, d) arrays (anything exposing
    ``apply``) or a plain point-to-point function.
    """
    if hasattr(fmap, "apply"):
        img = np.asarray(fmap.apply(m.points), dtype=float)
    else:
        img = np.vstack([np.atleast_1d(np.asarray(fmap(p), dtype=float)) for p in m.points])
    if img.ndim == 1:
        img = img[:, None]
    if not np.all(np.isfinite(img)):
        bad = int(np.argmin(np.all(np.isfinite(img), axis=1)))
        raise NumericError(f"map produced non-finite image of atom {m.points[bad].tolist()}")
    return FiniteMeasure._trusted(img, m.weights)


def restrict_normalize(m: FiniteMeasure, ball: Ball, metric: MetricSpec = EUCLIDEAN):
    """Mass of ``ball`` and the normalised restriction (flagged empty when null)."""
    inside = ball.contains(metric, m.points)
    mass = math.fsum(m.weights[inside])
    if mass <= 0:
        return 0.0, FiniteMeasure.empty_measure(m.dim)
    return mass, FiniteMeasure._trusted(m.points[inside], m.weights[inside] / mass, merge=False)


def tv_distance(m1: FiniteMeasure, m2: FiniteMeasure) -> float:
    _, a, b = align(m1, m2)
    return min(2.0, math.fsum(np.abs(a - b)))


def integrate(m: FiniteMeasure, f) -> float:
    return math.fsum(m.weights * f(m.points))


class PruneResult(NamedTuple):
    measure: FiniteMeasure
    dropped_mass: float
    moved_mass: float
    tv_bound: float
    fm_bound: float


def prune(m: FiniteMeasure, mass_floor: float = 0.0, merge_radius: float = 0.0,
          metric: MetricSpec = EUCLIDEAN) -> PruneResult:
    """Greedy merge within ``merge_radius``, then drop atoms lighter than ``mass_floor``.

    Merging seeds are taken in descending weight (ties: lexicographic
    coordinates); each seed absorbs every unassigned atom closer than the
    radius and is replaced by the mass-weighted centroid.  Each absorbed
    atom moves less than ``2 * merge_radius``.
    """
    if not (0.0 <= mass_floor <= 1e-6):
        raise InputError(f"mass_floor must lie in [0, 1e-6], got {mass_floor}")
    if merge_radius < 0:
        raise InputError("merge_radius must be nonnegative")
    pts, w = m.points, m.weights
    moved = 0.0
    if merge_radius > 0 and m.size > 1:
        order = np.lexsort(tuple(pts.T[::-1]) + (-w,))
        window = merge_radius
        if metric.kind == "truncated" and merge_radius > metric.cap:
            window = np.inf
        labels = kernels.greedy_merge(
            np.ascontiguousarray(pts), order.astype(np.int64), float(merge_radius), float(window),
            _METRIC_CODES[metric.kind], float(metric.cap or 0.0),
        )
        k = int(labels.max()) + 1
        if k < m.size:
            mass = np.bincount(labels, weights=w, minlength=k)
            cent = np.empty((k, m.dim))
            for j in range(m.dim):
                cent[:, j] = np.bincount(labels, weights=w * pts[:, j], minlength=k) / mass
            counts = np.bincount(labels, minlength=k)
            moved = math.fsum(mass[counts > 1])
            pts, w = cent, mass
    keep = w >= mass_floor
    dropped = math.fsum(w[~keep])
    if not keep.any():
        raise DegenerateError("pruning removed every atom")
    pts, w = pts[keep], w[keep]
    out = FiniteMeasure._trusted(pts, w / w.sum())
    return PruneResult(out, dropped, moved, 2.0 * dropped + 2.0 * moved,
                       2.0 * dropped + 2.0 * merge_radius * moved)


# -- test functions -----------------------------------------------------------

@dataclass(frozen=True)
class Tent:
    """x -> max(0, 1 - rho(x, center) / scale)."""

    center: tuple
    scale: float
    metric: MetricSpec = EUCLIDEAN

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.scale > 0:
            raise InputError("tent scale must be positive")

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        c = np.broadcast_to(np.asarray(self.center), pts.shape)
        return np.maximum(0.0, 1.0 - self.metric.rowwise(pts, c) / self.scale)

    def lipschitz(self) -> float:
        if self.metric.kind == "truncated":
            return max(1.0 / self.scale, 1.0 / self.metric.cap)
        return 1.0 / self.scale

    def to_dict(self):
        return {"kind": "tent", "center": list(self.center), "scale": self.scale}


@dataclass(frozen=True)
class ClippedCoordinate:
    """x -> clip(x_index, lo, hi) with |lo|, |hi| <= 1."""

    index: int = 0
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if not (-1.0 <= self.lo < self.hi <= 1.0):
            raise InputError("clipped coordinate needs -1 <= lo < hi <= 1")

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.clip(pts[:, self.index], self.lo, self.hi)

    def lipschitz(self, metric: MetricSpec = EUCLIDEAN) -> float:
        if metric.kind == "truncated":
            return max(1.0, (self.hi - self.lo) / metric.cap)
        return 1.0

    def to_dict(self):
        return {"kind": "clipped_coordinate", "index": self.index, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class ClippedPolynomial:
    """x -> clip(sum_k coeffs[k] * x_index**k, -bound, bound) with bound <= 1."""

    coeffs: tuple
    bound: float = 1.0
    index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if not self.coeffs:
            raise InputError("polynomial needs at least one coefficient")
        if not (0 < self.bound <= 1.0):
            raise InputError("clip bound must lie in (0, 1]")

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vals = np.polynomial.polynomial.polyval(pts[:, self.index], self.coeffs)
        return np.clip(vals, -self.bound, self.bound)

    def lipschitz(self) -> float:
        """Max |p'| over the closed region where |p| <= bound (compact unless p is constant)."""
        P = np.polynomial.Polynomial(self.coeffs).trim()
        if P.degree() < 1:
            return 0.0
        dP = P.deriv()
        knots = []
        for level in (-self.bound, self.bound):
            r = (P - level).roots()
            knots.extend(r[np.abs(r.imag) < 1e-9].real)
        if dP.degree() >= 1:
            r = dP.deriv().roots() if dP.degree() >= 2 else np.array([])
            knots.extend(np.asarray(r)[np.abs(np.imag(r)) < 1e-9].real)
        knots = np.array(sorted(knots))
        if knots.size == 0:
            return 0.0
        inside = np.abs(P(knots)) <= self.bound + 1e-12
        return float(np.max(np.abs(dP(knots[inside])), initial=0.0))

    def to_dict(self):
        return {"kind": "clipped_polynomial", "coeffs": list(self.coeffs), "bound": self.bound,
                "index": self.index}


def constant_function(value: float = 1.0) -> ClippedPolynomial:
    if abs(value) > 1:
        raise InputError("dictionary functions are bounded by 1")
    return ClippedPolynomial((value,), bound=1.0)


def function_from_dict(data: dict, metric: MetricSpec = EUCLIDEAN):
    kind = data.get("kind")
    if kind == "tent":
        return Tent(tuple(np.atleast_1d(data["center"])), float(data["scale"]), metric)
    if kind == "clipped_coordinate":
        return ClippedCoordinate(int(data.get("index", 0)), float(data.get("lo", -1.0)),
                                 float(data.get("hi", 1.0)))
    if kind == "clipped_polynomial":
        return ClippedPolynomial(tuple(data["coeffs"]), float(data.get("bound", 1.0)),
                                 int(data.get("index", 0)))
    if kind == "constant":
        return constant_function(float(data.get("value", 1.0)))
    raise InputError(f"unknown test function kind {kind!r}")


def default_dictionary(points, metric: MetricSpec = EUCLIDEAN, count: int = 16, scale: float = 1.0):
    """Tents centred on a data-driven grid plus clipped coordinates.

    Tent scale defaults to 1 so every entry is 1-Lipschitz.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    if count < 1:
        raise InputError("dictionary size must be >= 1")
    ts = np.linspace(0.0, 1.0, count)
    funcs = [Tent(tuple(lo + t * (hi - lo)), scale, metric) for t in ts]
    funcs += [ClippedCoordinate(i) for i in range(pts.shape[1])]
    return funcs
