"""The three-term penalty ``G_{alpha,beta}`` and its weighted-TV relatives.

``G(mu) = alpha ||mu||_KRu + beta int (1 + d(theta, e)^p) d|mu|(theta)``.

Only finite atomic measures are ever evaluated, so every moment is finite and
the ``+inf`` branch of the penalty never occurs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateExtremal, InvalidParameter
from .measure import DiscreteMeasure, PointedSpace, canonicalize, p_moment, tv_norm
from .transport import kru_norm

MODES = ("kru_moment", "weighted_tv")

P1_BANNER = ("p = 1 with alpha > 0 and a positively homogeneous activation: moving mass "
             "towards infinity strictly lowers the objective, so a nonzero minimiser "
             "need not exist and reported solutions may drift outwards.")


@dataclass(frozen=True)
class RegParams:
    """Penalty weights.

    ``mode="weighted_tv"`` solves in the moment-mapped variable ``nu = T_q(mu)``
    with a plain TV penalty; it requires ``alpha == 0`` and uses ``q`` (default ``p``).
    """

    alpha: float = 0.0
    beta: float = 1.0
    p: float = 2.0
    mode: str = "kru_moment"
    q: float | None = None

    def __post_init__(self):
        for name in ("alpha", "beta", "p"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise InvalidParameter(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, float(v))
        if self.alpha < 0:
            raise InvalidParameter(f"alpha must be >= 0, got {self.alpha}")
        if not self.beta > 0:
            raise InvalidParameter(f"beta must be > 0, got {self.beta}")
        if self.p < 1:
            raise InvalidParameter(f"p must be >= 1, got {self.p}")
        if self.mode not in MODES:
            raise InvalidParameter(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "weighted_tv":
            q = self.p if self.q is None else float(self.q)
            if not q > 0:
                raise InvalidParameter(f"q must be > 0, got {q}")
            if self.alpha != 0:
                raise InvalidParameter("weighted_tv mode is only defined for alpha = 0")
            object.__setattr__(self, "q", q)
        elif self.q is not None:
            raise InvalidParameter("q is only meaningful in weighted_tv mode")

    @property
    def moment_order(self) -> float:
        """Exponent of the moment weight ``1 + d^r`` actually penalised."""
        return self.q if self.mode == "weighted_tv" else self.p

    @property
    def ill_posed(self) -> bool:
        return self.p == 1.0 and self.alpha > 0


def weighted_dual_norm(m: DiscreteMeasure, q: float) -> float:
    """``sum_i |w_i| (1 + d(theta_i, e)^q)``, the TV norm of the moment-mapped measure."""
    if not q > 0:
        raise InvalidParameter(f"q must be positive, got {q}")
    m = canonicalize(m)
    return tv_norm(m) + p_moment(m, q)


def g_alpha_beta(m: DiscreteMeasure, params: RegParams) -> float:
    """``alpha ||m||_KRu + beta (||m||_TV + int d^p d|m|)``."""
    m = canonicalize(m)
    if m.size == 0:
        return 0.0
    kr = kru_norm(m) if params.alpha > 0 else 0.0
    return params.alpha * kr + params.beta * weighted_dual_norm(m, params.moment_order)


def dipole_penalty(space: PointedSpace, x, y, a: float, c: float, params: RegParams) -> float:
    """G of ``a delta_x - a delta_y + c delta_e`` in closed form, atoms merged where they coincide."""
    x = np.ravel(np.asarray(x, dtype=float))
    y = np.ravel(np.asarray(y, dtype=float))
    e = space.base
    r = params.moment_order
    atoms: dict[tuple, float] = {}
    for loc, w in ((x, a), (y, -a), (e, c)):
        key = tuple(loc + 0.0)
        atoms[key] = atoms.get(key, 0.0) + w
    moment = sum(abs(w) * (1.0 + float(space.distance_to_base(np.array(k))) ** r)
                 for k, w in atoms.items())
    # balanced part is the dipole itself, the base atom carries the mass
    kr = abs(c) + abs(a) * float(space.distance(x, y))
    return params.alpha * kr + params.beta * moment


def extremal_dipole_scale(space: PointedSpace, x, y, c_abs: float, params: RegParams,
                          c_sign: float = 1.0) -> float:
    """The ``a >= 0`` with ``G(a delta_x - a delta_y + c delta_e) = 1``.

    ``c = c_sign * c_abs``.  ``G`` is convex, piecewise linear and increasing in
    ``a`` (one kink where a coinciding atom changes sign), so the root is found
    exactly on the right linear piece.  For distinct ``x, y, e`` and ``c = 0``
    this is ``1 / (alpha d(x, y) + beta (2 + d(x, e)^p + d(y, e)^p))``.
    """
    if c_abs < 0:
        raise InvalidParameter(f"c_abs must be >= 0, got {c_abs}")
    c = float(np.sign(c_sign) or 1.0) * float(c_abs)
    g = lambda a: dipole_penalty(space, x, y, a, c, params)  # noqa: E731
    g0 = g(0.0)
    same = np.array_equal(np.ravel(x), np.ravel(y))
    if same:
        if abs(g0 - 1.0) <= 1e-12:
            return 0.0  # the extremal point is the pure base atom
        raise DegenerateExtremal("x == y: only the base atom remains and it is not normalised")
    if g0 >= 1.0:
        raise DegenerateExtremal(f"base part alone already has penalty {g0} >= 1")
    k = abs(c)
    if k > 0 and g(k) >= 1.0:
        return k * (1.0 - g0) / (g(k) - g0)
    lo = k
    slope = g(lo + 1.0) - g(lo)
    if not slope > 0:
        raise DegenerateExtremal("penalty does not grow along the dipole")
    return lo + (1.0 - g(lo)) / slope


def extremal_dirac_scale(space: PointedSpace, z, params: RegParams) -> float:
    """``w > 0`` with ``G(w delta_z) = 1``."""
    z = np.ravel(np.asarray(z, dtype=float))
    dz = float(space.distance_to_base(z))
    denom = params.alpha * (1.0 + dz) + params.beta * (1.0 + dz ** params.moment_order)
    if not denom > 0:
        raise DegenerateExtremal("zero penalty for a Dirac")
    return 1.0 / denom


def extremal_base_mass(params: RegParams) -> float:
    """``|c|`` with ``G(c delta_e) = 1``."""
    return 1.0 / (params.alpha + params.beta)
