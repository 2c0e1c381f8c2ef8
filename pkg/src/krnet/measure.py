"""Finite signed atomic measures on a pointed Euclidean space.

A measure ``mu = sum_i w_i delta_{theta_i}`` is stored as a ``(K, D)`` array of
locations and a ``(K,)`` array of weights.  Measures are immutable: every
operation returns a new, canonical measure (sorted, merged, no zero weights).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import InvalidMeasure, InvalidParameter, SpaceMismatch


@dataclass(frozen=True)
class PointedSpace:
    """``R^D`` with metric ``d(a, b) = ||a - b||_2 ** metric_exponent`` and base point ``e``.

    For ``metric_exponent < 1`` the metric is a snowflake of the Euclidean one:
    still a metric, but no longer geodesic.
    """

    dimension: int
    base_point: tuple[float, ...] = None  # type: ignore[assignment]
    metric_exponent: float = 1.0

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise InvalidParameter(f"dimension must be a positive integer, got {self.dimension}")
        object.__setattr__(self, "dimension", int(self.dimension))
        if self.base_point is None:
            bp = (0.0,) * self.dimension
        else:
            bp = tuple(float(v) + 0.0 for v in np.ravel(self.base_point))
        if len(bp) != self.dimension:
            raise InvalidParameter(
                f"base_point has length {len(bp)}, expected {self.dimension}")
        if not all(np.isfinite(bp)):
            raise InvalidParameter("base_point must be finite")
        object.__setattr__(self, "base_point", bp)
        s = float(self.metric_exponent)
        if not (0.0 < s <= 1.0):
            raise InvalidParameter(f"metric_exponent must lie in (0, 1], got {s}")
        object.__setattr__(self, "metric_exponent", s)

    @property
    def base(self) -> np.ndarray:
        return np.asarray(self.base_point, dtype=float)

    @property
    def base_at_origin(self) -> bool:
        return not any(self.base_point)

    def distance(self, a, b) -> np.ndarray:
        """Broadcasting distance between point arrays of shape ``(..., D)``."""
        diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        r = np.sqrt(np.sum(diff * diff, axis=-1))
        if self.metric_exponent != 1.0:
            r = r ** self.metric_exponent
        return r

    def pairwise(self, a, b) -> np.ndarray:
        """Distance matrix ``D[i, j] = d(a_i, b_j)``."""
        a = np.asarray(a, dtype=float).reshape(-1, self.dimension)
        b = np.asarray(b, dtype=float).reshape(-1, self.dimension)
        return self.distance(a[:, None, :], b[None, :, :])

    def distance_to_base(self, points) -> np.ndarray:
        return self.distance(points, self.base)


@dataclass(frozen=True)
class Atom:
    location: tuple[float, ...]
    weight: float


def _as_points(space: PointedSpace, locations) -> np.ndarray:
    arr = np.asarray(locations, dtype=float)
    if arr.size == 0:
        return np.zeros((0, space.dimension))
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != space.dimension:
        raise InvalidMeasure(
            f"locations must have shape (K, {space.dimension}), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Signed atomic measure; construct through :func:`measure` to get canonical form."""

    space: PointedSpace
    locations: np.ndarray
    weights: np.ndarray
    _canonical: bool = field(default=False, repr=False)

    def __post_init__(self):
        locs = _as_points(self.space, self.locations)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != locs.shape[0]:
            raise InvalidMeasure(
                f"{locs.shape[0]} locations but {w.shape[0]} weights")
        if not np.all(np.isfinite(locs)) or not np.all(np.isfinite(w)):
            raise InvalidMeasure("non-finite coordinate or weight")
        locs = locs + 0.0  # fold -0.0 into 0.0 so exact merging is sign-agnostic
        locs.setflags(write=False)
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    def __len__(self) -> int:
        return self.size

    @property
    def atoms(self) -> list[Atom]:
        return [Atom(tuple(float(v) for v in loc), float(w))
                for loc, w in zip(self.locations, self.weights)]

    @property
    def is_canonical(self) -> bool:
        return self._canonical

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        return add(self, other)

    def __sub__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        return add(self, scale(other, -1.0))

    def __neg__(self) -> "DiscreteMeasure":
        return scale(self, -1.0)

    def __rmul__(self, t: float) -> "DiscreteMeasure":
        return scale(self, t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        a, b = canonicalize(self), canonicalize(other)
        return (a.space == b.space and a.size == b.size
                and np.array_equal(a.locations, b.locations)
                and np.array_equal(a.weights, b.weights))

    def __hash__(self):
        return hash((self.space, self.locations.tobytes(), self.weights.tobytes()))

    def __repr__(self) -> str:
        body = ", ".join(f"{w:+.6g}@{tuple(np.round(loc, 6))}"
                         for loc, w in zip(self.locations, self.weights))
        return f"DiscreteMeasure(D={self.space.dimension}, [{body}])"


def canonicalize(m: DiscreteMeasure) -> DiscreteMeasure:
    """Merge atoms with exactly equal coordinates, drop zero weights, sort lexicographically."""
    if m.is_canonical:
        return m
    if m.size == 0:
        return DiscreteMeasure(m.space, m.locations, m.weights, _canonical=True)
    uniq, inverse = np.unique(m.locations, axis=0, return_inverse=True)
    summed = np.zeros(uniq.shape[0])
    np.add.at(summed, inverse.reshape(-1), m.weights)
    keep = summed != 0.0
    return DiscreteMeasure(m.space, uniq[keep], summed[keep], _canonical=True)


def measure(space: PointedSpace, locations=(), weights=()) -> DiscreteMeasure:
    """Build a canonical measure from locations ``(K, D)`` and weights ``(K,)``."""
    return canonicalize(DiscreteMeasure(space, locations, weights))


def from_atoms(space: PointedSpace, atoms: Iterable[Atom | tuple]) -> DiscreteMeasure:
    locs, ws = [], []
    for a in atoms:
        loc, w = (a.location, a.weight) if isinstance(a, Atom) else a
        locs.append(np.ravel(loc).astype(float))
        ws.append(float(w))
    return measure(space, np.array(locs).reshape(-1, space.dimension), ws)


def empty(space: PointedSpace) -> DiscreteMeasure:
    return measure(space)


def dirac(space: PointedSpace, location, weight: float = 1.0) -> DiscreteMeasure:
    return measure(space, np.ravel(location)[None, :], [weight])


def dipole(space: PointedSpace, x, y, a: float = 1.0) -> DiscreteMeasure:
    """``a (delta_x - delta_y)``."""
    return measure(space, np.vstack([np.ravel(x), np.ravel(y)]), [a, -a])


def _check_same(m: DiscreteMeasure, n: DiscreteMeasure) -> None:
    if m.space != n.space:
        raise SpaceMismatch(f"{m.space} vs {n.space}")


def total_mass(m: DiscreteMeasure) -> float:
    return float(np.sum(m.weights))


def tv_norm(m: DiscreteMeasure) -> float:
    return float(np.sum(np.abs(m.weights)))


def p_moment(m: DiscreteMeasure, p: float) -> float:
    """``sum_i |w_i| d(theta_i, e) ** p``."""
    if not p > 0:
        raise InvalidParameter(f"moment order must be positive, got {p}")
    if m.size == 0:
        return 0.0
    r = m.space.distance_to_base(m.locations)
    return float(np.sum(np.abs(m.weights) * r ** p))


def add(m: DiscreteMeasure, n: DiscreteMeasure) -> DiscreteMeasure:
    _check_same(m, n)
    return measure(m.space, np.vstack([m.locations, n.locations]),
                   np.concatenate([m.weights, n.weights]))


def scale(m: DiscreteMeasure, t: float) -> DiscreteMeasure:
    t = float(t)
    if not np.isfinite(t):
        raise InvalidParameter("scale factor must be finite")
    if t == 0.0:
        return empty(m.space)
    return measure(m.space, m.locations, m.weights * t)


def jordan_split(m: DiscreteMeasure) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Positive part and (absolute value of the) negative part, both nonnegative."""
    m = canonicalize(m)
    pos = m.weights > 0
    return (measure(m.space, m.locations[pos], m.weights[pos]),
            measure(m.space, m.locations[~pos], -m.weights[~pos]))


def balance_split(m: DiscreteMeasure) -> tuple[DiscreteMeasure, float]:
    """``m = mu0 + c delta_e`` with ``c = m(Z)`` and ``mu0`` balanced."""
    m = canonicalize(m)
    c = total_mass(m)
    if c == 0.0:
        return m, 0.0
    mu0 = add(m, dirac(m.space, m.space.base, -c))
    return mu0, c


def rescale_pushforward(m: DiscreteMeasure, R: float) -> DiscreteMeasure:
    """``(1/R) (Phi_R)_# m`` with ``Phi_R(z) = R z`` (base point must be the origin)."""
    if not R > 0:
        raise InvalidParameter(f"rescaling factor must be positive, got {R}")
    if not m.space.base_at_origin:
        raise InvalidParameter("rescale_pushforward requires the base point at the origin")
    m = canonicalize(m)
    return measure(m.space, m.locations * R, m.weights / R)


def allclose(m: DiscreteMeasure, n: DiscreteMeasure, atol: float = 1e-12) -> bool:
    """Same support and weights within ``atol`` (locations compared exactly)."""
    m, n = canonicalize(m), canonicalize(n)
    if m.space != n.space or m.size != n.size:
        return False
    return (np.array_equal(m.locations, n.locations)
            and bool(np.all(np.abs(m.weights - n.weights) <= atol)))


def to_json_dict(m: DiscreteMeasure) -> dict:
    m = canonicalize(m)
    sp = m.space
    return {
        "dimension": sp.dimension,
        "base_point": list(sp.base_point),
        "metric_exponent": sp.metric_exponent,
        "atoms": [{"location": [float(v) for v in loc], "weight": float(w)}
                  for loc, w in zip(m.locations, m.weights)],
    }


def from_json_dict(data: dict) -> DiscreteMeasure:
    try:
        space = PointedSpace(int(data["dimension"]), data.get("base_point"),
                             float(data.get("metric_exponent", 1.0)))
        atoms = data.get("atoms", [])
        locs = np.array([a["location"] for a in atoms], dtype=float).reshape(-1, space.dimension)
        ws = [float(a["weight"]) for a in atoms]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidMeasure(f"malformed measure JSON: {exc}") from exc
    return measure(space, locs, ws)
