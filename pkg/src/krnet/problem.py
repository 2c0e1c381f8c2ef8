"""Problem definition, objective evaluation and the solver's internal feature model."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidParameter, SpaceMismatch
from .measure import DiscreteMeasure, PointedSpace, add, canonicalize, scale
from .network import Activation, Dataset, feature_matrix, moment_map, moment_map_inverse, realize_lifted
from .regularizer import RegParams, weighted_dual_norm
from .transport import kru_distance, kru_norm

LOSSES = ("squared", "absolute")
MOMENT_ON = ("solution", "solution_minus_first_reference")


def loss_value(kind: str, y: np.ndarray, f: np.ndarray) -> np.ndarray:
    r = y - f
    return r * r if kind == "squared" else np.abs(r)


def loss_derivative(kind: str, y: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``dL/df``; the absolute loss uses the zero subgradient at its kink."""
    r = y - f
    return -2.0 * r if kind == "squared" else -np.sign(r)


@dataclass(frozen=True)
class Problem:
    """Regularised empirical risk over measures on ``R^{d+1}``.

    ``references`` holds ``(coefficient, measure)`` pairs; each adds
    ``alpha * coefficient * ||mu - ref||_KRu``.  Without references the KRu
    term is ``alpha ||mu||_KRu``.  ``data_weight`` multiplies the empirical risk
    (0 switches the data term off).
    """

    dataset: Dataset
    activation: Activation
    loss: str = "squared"
    params: RegParams = field(default_factory=RegParams)
    references: tuple[tuple[float, DiscreteMeasure], ...] = ()
    moment_on: str = "solution"
    data_weight: float = 1.0
    space: PointedSpace | None = None

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise InvalidParameter(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.moment_on not in MOMENT_ON:
            raise InvalidParameter(f"moment_on must be one of {MOMENT_ON}")
        if not (np.isfinite(self.data_weight) and self.data_weight >= 0):
            raise InvalidParameter("data_weight must be finite and >= 0")
        space = self.space or PointedSpace(self.dataset.input_dim + 1)
        if space.dimension != self.dataset.input_dim + 1:
            raise SpaceMismatch(
                f"space has dimension {space.dimension}, lifted inputs {self.dataset.input_dim + 1}")
        object.__setattr__(self, "space", space)
        refs = []
        for coef, ref in self.references:
            if not (np.isfinite(coef) and coef >= 0):
                raise InvalidParameter(f"reference coefficient must be >= 0, got {coef}")
            if ref.space != space:
                raise SpaceMismatch("reference measure lives in a different space")
            refs.append((float(coef), canonicalize(ref)))
        object.__setattr__(self, "references", tuple(refs))
        if self.moment_on == "solution_minus_first_reference" and not refs:
            raise InvalidParameter("moment_on=solution_minus_first_reference needs a reference")
        if self.activation.lipschitz_constant is None and not (
                self.params.mode == "weighted_tv" and self.params.alpha == 0):
            raise InvalidParameter(
                f"{self.activation} is not Lipschitz: use mode=weighted_tv with alpha=0")

    @property
    def lifted_inputs(self) -> np.ndarray:
        return self.dataset.lifted

    def with_labels(self, labels) -> "Problem":
        return replace(self, dataset=self.dataset.with_labels(labels))


def empirical_risk(m: DiscreteMeasure, prob: Problem) -> float:
    f = realize_lifted(m, prob.activation, prob.lifted_inputs)
    return prob.data_weight * float(np.mean(loss_value(prob.loss, prob.dataset.labels, f)))


def penalty(m: DiscreteMeasure, prob: Problem) -> float:
    """All non-data terms of the objective."""
    par = prob.params
    kr = 0.0
    if par.alpha > 0:
        if prob.references:
            kr = sum(c * kru_distance(m, ref) for c, ref in prob.references if c > 0)
        else:
            kr = kru_norm(m)
    base = m
    if prob.moment_on == "solution_minus_first_reference":
        base = add(m, scale(prob.references[0][1], -1.0))
    return par.alpha * kr + par.beta * weighted_dual_norm(base, par.moment_order)


def objective(m: DiscreteMeasure, prob: Problem) -> float:
    """Empirical risk plus penalty, always evaluated on the physical measure."""
    if m.space != prob.space:
        raise SpaceMismatch(f"{m.space} vs {prob.space}")
    return empirical_risk(m, prob) + penalty(m, prob)


def shifted_problem(prob: Problem) -> tuple[Problem, DiscreteMeasure]:
    """Distillation in the variable ``nu = mu - mu*``: a plain ERM problem with residual labels."""
    if not prob.references:
        raise InvalidParameter("distillation needs the teacher as first reference")
    coef, teacher = prob.references[0]
    if len(prob.references) != 1 or prob.moment_on != "solution_minus_first_reference":
        raise InvalidParameter(
            "distillation needs exactly one reference and moment_on=solution_minus_first_reference")
    if coef != 1.0:
        raise InvalidParameter("the distillation teacher must have coefficient 1")
    resid = prob.dataset.labels - realize_lifted(teacher, prob.activation, prob.lifted_inputs)
    shifted = replace(prob, dataset=prob.dataset.with_labels(resid), references=(),
                      moment_on="solution")
    return shifted, teacher


class FeatureModel:
    """Features and penalties in the coordinates the solver works in.

    With ``alpha = 0`` both modes are solved as the same TV problem in the
    moment-mapped variable ``u = T_r(mu)``: an atom at ``z`` carries the
    normalised feature ``sigma(<z, x>) / (1 + d(z, e)^r)`` and costs ``beta``
    per unit.  ``kru_moment`` and ``weighted_tv`` differ only in how the
    problem is stated, so they share this code path exactly.  The ``alpha > 0``
    solvers use the plain features :meth:`phi`.
    """

    def __init__(self, prob: Problem):
        self.prob = prob
        self.space = prob.space
        self.act = prob.activation
        self.X = prob.lifted_inputs
        self.y = prob.dataset.labels
        self.N = prob.dataset.size
        self.scale = prob.data_weight / self.N
        self.weighted = prob.params.mode == "weighted_tv"
        self.r = prob.params.moment_order

    def unit_cost(self, Z: np.ndarray) -> np.ndarray:
        """``1 + d(z, e)^r``, the physical penalty per unit of mass."""
        Z = np.atleast_2d(Z)
        return 1.0 + self.space.distance_to_base(Z) ** self.r

    def unit_cost_grad(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(Z)
        diff = Z - self.space.base
        nrm = np.linalg.norm(diff, axis=-1, keepdims=True)
        ex = self.r * self.space.metric_exponent
        with np.errstate(divide="ignore", invalid="ignore"):
            g = ex * nrm ** (ex - 2.0) * diff
        return np.where(nrm > 0, g, 0.0)

    def phi(self, Z: np.ndarray) -> np.ndarray:
        """``(N, K)`` plain features ``sigma(<z_k, x_i>)``."""
        return feature_matrix(self.act, np.atleast_2d(Z), self.X)

    def psi(self, Z: np.ndarray) -> np.ndarray:
        """Normalised features ``sigma(<z_k, x_i>) / (1 + d(z_k, e)^r)``."""
        Z = np.atleast_2d(Z)
        return self.phi(Z) / self.unit_cost(Z)[None, :]

    def eta(self, Z: np.ndarray, dL: np.ndarray, normalised: bool = False) -> np.ndarray:
        """Certificate ``scale * sum_i dL_i feature(z, x_i)`` at each row of ``Z``."""
        F = self.psi(Z) if normalised else self.phi(Z)
        return self.scale * (dL @ F)

    def eta_grad(self, z: np.ndarray, dL: np.ndarray, normalised: bool = False) -> tuple[float, np.ndarray]:
        """Value and gradient of the certificate at a single location."""
        z = np.ravel(z)
        pre = self.X @ z
        sig = self.act(pre)
        dsig = self.act.derivative(pre)
        if not normalised:
            return self.scale * float(dL @ sig), self.scale * ((dL * dsig) @ self.X)
        w = float(self.unit_cost(z)[0])
        dw = self.unit_cost_grad(z)[0]
        val = self.scale * float(dL @ (sig / w))
        grad = self.scale * (((dL * dsig) @ self.X) / w - float(dL @ sig) * dw / w ** 2)
        return val, grad

    def to_tv(self, m: DiscreteMeasure) -> DiscreteMeasure:
        return moment_map(m, self.r)

    def from_tv(self, v: DiscreteMeasure) -> DiscreteMeasure:
        return moment_map_inverse(v, self.r)

    def predictions(self, m: DiscreteMeasure) -> np.ndarray:
        """Network outputs of a physical measure at the training inputs."""
        if m.size == 0:
            return np.zeros(self.N)
        return self.phi(m.locations) @ m.weights

    def loss_grad(self, f: np.ndarray) -> np.ndarray:
        return loss_derivative(self.prob.loss, self.y, f)
