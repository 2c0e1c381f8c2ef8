"""Infinite-width shallow networks ``f_mu(x) = int sigma(<theta, (x, 1)>) d mu(theta)``.

Inputs are stored unlifted (length ``d``) and lifted to ``(x, 1)`` on evaluation,
so measure atoms live in ``R^{d+1}``.  Gradients are hand-coded per activation,
with the convention ``sigma'(0) = 0`` at the kinks of relu and repu.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import InvalidParameter, SpaceMismatch
from .measure import DiscreteMeasure, PointedSpace, canonicalize, measure

GRID_SEED = 20240917


@dataclass(frozen=True)
class Activation:
    """Scalar nonlinearity with the metadata the solvers need.

    ``lipschitz_constant`` is ``None`` when the activation is not globally Lipschitz.
    """

    kind: str
    param: float | None = None

    def __post_init__(self):
        if self.kind not in _CATALOG:
            raise InvalidParameter(f"unknown activation {self.kind!r}; choose from {sorted(_CATALOG)}")
        if self.kind == "leaky_relu":
            lam = 0.01 if self.param is None else float(self.param)
            if not 0.0 < lam < 1.0:
                raise InvalidParameter(f"leaky_relu slope must lie in (0, 1), got {lam}")
            object.__setattr__(self, "param", lam)
        elif self.kind == "repu":
            deg = 2 if self.param is None else self.param
            if int(deg) != deg or deg < 2:
                raise InvalidParameter(f"repu degree must be an integer >= 2, got {deg}")
            object.__setattr__(self, "param", int(deg))
        elif self.param is not None:
            raise InvalidParameter(f"{self.kind} takes no parameter")

    @property
    def lipschitz_constant(self) -> float | None:
        if self.kind in ("relu", "leaky_relu", "tanh"):
            return 1.0
        if self.kind == "sigmoid":
            return 0.25
        return None  # repu grows polynomially

    @property
    def positively_homogeneous(self) -> bool:
        return self.kind in ("relu", "leaky_relu")

    @property
    def value_at_zero(self) -> float:
        return float(self(np.zeros(1))[0])

    def __call__(self, a: np.ndarray) -> np.ndarray:
        return _CATALOG[self.kind][0](np.asarray(a, dtype=float), self.param)

    def derivative(self, a: np.ndarray) -> np.ndarray:
        return _CATALOG[self.kind][1](np.asarray(a, dtype=float), self.param)

    @classmethod
    def parse(cls, spec: str) -> "Activation":
        """``"relu"``, ``"leaky_relu:0.1"``, ``"repu:3"``, ..."""
        name, _, arg = spec.partition(":")
        if not arg:
            return cls(name)
        return cls(name, int(arg) if name == "repu" else float(arg))

    def __str__(self) -> str:
        return self.kind if self.param is None else f"{self.kind}:{self.param}"


def _sigmoid(a, _):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ex = np.exp(a[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _sigmoid_grad(a, _):
    s = _sigmoid(a, None)
    return s * (1.0 - s)


_CATALOG: dict[str, tuple[Callable, Callable]] = {
    "relu": (lambda a, _: np.maximum(a, 0.0),
             lambda a, _: (a > 0).astype(float)),
    "leaky_relu": (lambda a, lam: np.where(a > 0, a, lam * a),
                   lambda a, lam: np.where(a > 0, 1.0, np.where(a < 0, lam, 0.0))),
    "tanh": (lambda a, _: np.tanh(a),
             lambda a, _: 1.0 - np.tanh(a) ** 2),
    "sigmoid": (_sigmoid, _sigmoid_grad),
    "repu": (lambda a, m: np.maximum(a, 0.0) ** m,
             lambda a, m: np.where(a > 0, m * np.maximum(a, 0.0) ** (m - 1), 0.0)),
}


@dataclass(frozen=True)
class Dataset:
    """Pairs ``(x_i, y_i)`` with unlifted inputs of shape ``(N, d)``; ``d = 0`` is allowed."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.labels, dtype=float).reshape(-1)
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim == 1:
            x = x.reshape(y.shape[0], -1) if y.shape[0] else x.reshape(0, 0)
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise InvalidParameter(f"inputs {x.shape} and labels {y.shape} disagree")
        if y.shape[0] < 1:
            raise InvalidParameter("a dataset needs at least one sample")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidParameter("dataset entries must be finite")
        x = x.copy()
        y = y.copy()
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def lifted(self) -> np.ndarray:
        return lift(self.inputs)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.inputs, labels)


def lift(x) -> np.ndarray:
    """``x -> (x, 1)`` row-wise."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _check_dim(m: DiscreteMeasure, lifted_dim: int) -> None:
    if m.space.dimension != lifted_dim:
        raise SpaceMismatch(
            f"measure lives in R^{m.space.dimension} but lifted inputs have length {lifted_dim}")


def feature_matrix(act: Activation, thetas: np.ndarray, lifted_x: np.ndarray) -> np.ndarray:
    """``Phi[i, k] = sigma(<theta_k, x_i>)`` for lifted inputs ``x_i``."""
    return act(np.asarray(lifted_x, dtype=float) @ np.asarray(thetas, dtype=float).T)


def feature_value(act: Activation, theta, x_lifted) -> float:
    return float(act(np.dot(np.ravel(theta), np.ravel(x_lifted))))


def feature_grad_theta(act: Activation, theta, x_lifted) -> np.ndarray:
    """``grad_theta sigma(<theta, x>) = sigma'(<theta, x>) x``."""
    x = np.ravel(np.asarray(x_lifted, dtype=float))
    return float(act.derivative(np.dot(np.ravel(theta), x))) * x


def realize_lifted(m: DiscreteMeasure, act: Activation, lifted_x: np.ndarray) -> np.ndarray:
    lifted_x = np.atleast_2d(lifted_x)
    _check_dim(m, lifted_x.shape[1])
    if m.size == 0:
        return np.zeros(lifted_x.shape[0])
    return feature_matrix(act, m.locations, lifted_x) @ m.weights


def realize(m: DiscreteMeasure, act: Activation, x) -> float:
    """``f_m(x) = sum_i w_i sigma(<theta_i, (x, 1)>)`` for one unlifted input."""
    return float(realize_lifted(m, act, lift(np.reshape(x, (1, -1))))[0])


def realize_batch(m: DiscreteMeasure, act: Activation, data: Dataset | np.ndarray) -> np.ndarray:
    x = data.inputs if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    return realize_lifted(m, act, lift(x))


def ball_grid(input_dim: int, radius: float, grid_size: int) -> np.ndarray:
    """``grid_size`` deterministic low-discrepancy points in the closed ``radius``-ball of ``R^d``.

    Scrambled Sobol points in ``[-1, 1]^d`` are pushed radially onto the ball,
    mapping each sup-norm sphere onto the Euclidean sphere of the same radius.
    The first point is replaced by the origin.
    """
    if not radius > 0:
        raise InvalidParameter(f"radius must be positive, got {radius}")
    if int(grid_size) != grid_size or grid_size <= 0:
        raise InvalidParameter(f"grid_size must be a positive integer, got {grid_size}")
    if input_dim == 0:
        return np.zeros((1, 0))
    with warnings.catch_warnings():
        # non-power-of-two sizes only lose Sobol balance, which is harmless here
        warnings.simplefilter("ignore", UserWarning)
        u = qmc.Sobol(d=input_dim, scramble=True, seed=GRID_SEED).random(int(grid_size))
    cube = 2.0 * u - 1.0
    norms = np.linalg.norm(cube, axis=1)
    inf_norms = np.max(np.abs(cube), axis=1)
    factor = np.divide(inf_norms, norms, out=np.zeros_like(norms), where=norms > 0)
    pts = radius * cube * factor[:, None]
    pts[0] = 0.0
    return pts


def uniform_error(m: DiscreteMeasure, n: DiscreteMeasure, act: Activation,
                  radius: float = 1.0, grid_size: int = 4096) -> float:
    """``max |f_m(x) - f_n(x)|`` over a fixed grid of the input ball of radius ``radius``."""
    if act.lipschitz_constant is None:
        raise InvalidParameter("uniform_error needs a Lipschitz activation")
    if m.space != n.space:
        raise SpaceMismatch(f"{m.space} vs {n.space}")
    pts = ball_grid(m.space.dimension - 1, radius, grid_size)
    diff = realize_batch(m, act, pts) - realize_batch(n, act, pts)
    return float(np.max(np.abs(diff)))


def moment_weights(space: PointedSpace, locations: np.ndarray, p: float) -> np.ndarray:
    """``1 + d(theta, e)^p`` per location."""
    if not p > 0:
        raise InvalidParameter(f"moment order must be positive, got {p}")
    if len(locations) == 0:
        return np.zeros(0)
    return 1.0 + space.distance_to_base(locations) ** p


def moment_map(m: DiscreteMeasure, p: float) -> DiscreteMeasure:
    """Weights multiplied by ``1 + d(theta, e)^p``."""
    m = canonicalize(m)
    return measure(m.space, m.locations, m.weights * moment_weights(m.space, m.locations, p))


def moment_map_inverse(n: DiscreteMeasure, p: float) -> DiscreteMeasure:
    n = canonicalize(n)
    return measure(n.space, n.locations, n.weights / moment_weights(n.space, n.locations, p))
