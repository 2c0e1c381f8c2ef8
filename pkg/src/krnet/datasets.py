"""Synthetic teacher-student data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter
from .measure import DiscreteMeasure, canonicalize
from .network import Activation, Dataset, realize_batch

DISTRIBUTIONS = ("gaussian", "uniform_ball")


@dataclass(frozen=True)
class InputDistribution:
    """``gaussian`` with per-coordinate std ``scale`` or ``uniform_ball`` of radius ``scale``."""

    kind: str = "gaussian"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in DISTRIBUTIONS:
            raise InvalidParameter(f"input distribution must be one of {DISTRIBUTIONS}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidParameter(f"distribution scale must be positive, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def parse(cls, value) -> "InputDistribution":
        """Accept ``{"kind": ..., "scale": ...}``, ``"gaussian:2"`` or an instance."""
        if isinstance(value, cls):
            return value
        if isinstance(value, dict):
            return cls(value.get("kind", "gaussian"), value.get("scale", 1.0))
        kind, _, arg = str(value).partition(":")
        return cls(kind, float(arg) if arg else 1.0)

    def sample(self, rng: np.random.Generator, n: int, d: int) -> np.ndarray:
        if d == 0:
            return np.zeros((n, 0))
        g = rng.standard_normal((n, d))
        if self.kind == "gaussian":
            return self.scale * g
        nrm = np.linalg.norm(g, axis=1, keepdims=True)
        nrm[nrm == 0] = 1.0
        radius = self.scale * rng.random((n, 1)) ** (1.0 / d)
        return g / nrm * radius


def generate_dataset(teacher: DiscreteMeasure, act: Activation, N: int, noise_std: float = 0.0,
                     input_distribution: InputDistribution | str = "gaussian",
                     seed: int = 0) -> Dataset:
    """Draw ``N`` iid inputs and label them with the teacher network plus Gaussian noise."""
    if int(N) != N or N < 1:
        raise InvalidParameter(f"N must be a positive integer, got {N}")
    if not (np.isfinite(noise_std) and noise_std >= 0):
        raise InvalidParameter(f"noise_std must be >= 0, got {noise_std}")
    dist = InputDistribution.parse(input_distribution)
    teacher = canonicalize(teacher)
    d = teacher.space.dimension - 1
    rng = np.random.default_rng(seed)
    X = dist.sample(rng, int(N), d)
    y = realize_batch(teacher, act, X)
    if noise_std > 0:
        y = y + noise_std * rng.standard_normal(int(N))
    return Dataset(X, y)
