"""Insertion oracles: the extremal point that most decreases the linearised objective.

The dual certificate is ``eta(z) = (w/N) sum_i L'(y_i, f(x_i)) sigma(<z, (x_i, 1)>)``;
adding ``t E`` for an extremal ``E`` (penalty 1) changes the objective by
``t (<eta, E> + 1) + o(t)``.  Maximising ``|<eta, E>|`` over the dictionary is
nonconvex, so both oracles run deterministic multi-start L-BFGS and make no
global claim.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .measure import DiscreteMeasure, canonicalize, dirac, dipole
from .problem import FeatureModel, Problem
from .regularizer import extremal_base_mass, extremal_dipole_scale, extremal_dirac_scale
from .transport import kru_dual_function

EPS_CERT = 1e-6
N_STARTS = 32
PROBE_POOL = 512


@dataclass(frozen=True)
class Candidate:
    """A normalised extremal point and the certificate score that selected it."""

    kind: str  # "dirac" | "dipole" | "base"
    measure: DiscreteMeasure
    score: float
    threshold: float
    locations: tuple[tuple[float, ...], ...]


class Certificate:
    """``eta`` plus optional Lipschitz linear terms, with gradients, at fixed residuals.

    ``normalised=True`` divides the data part by ``1 + d(z, e)^r`` inside the
    feature (the TV coordinates of the ``alpha = 0`` problem).
    """

    def __init__(self, model: FeatureModel, current: DiscreteMeasure,
                 extra: list[tuple[float, object]] | None = None, normalised: bool = False):
        self.model = model
        self.dL = model.loss_grad(model.predictions(current))
        self.extra = extra or []  # (coefficient, 1-Lipschitz function) pairs
        self.normalised = normalised

    @property
    def trivial(self) -> bool:
        return (self.model.scale == 0.0 or not np.any(self.dL)) and not self.extra

    def value(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(Z)
        v = self.model.eta(Z, self.dL, self.normalised)
        for coef, h in self.extra:
            v = v + coef * h(Z)
        return v

    def value_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        val, grad = self.model.eta_grad(z, self.dL, self.normalised)
        for coef, h in self.extra:
            hv, hg = _dual_value_grad(h, z)
            val += coef * hv
            grad = grad + coef * hg
        return val, grad


def _dual_value_grad(h, z):
    if hasattr(h, "value_grad"):
        return h.value_grad(z)
    # generic Lipschitz term: a central difference picks an active piece
    z = np.ravel(z)
    step = 1e-7
    val = float(h(z[None, :])[0])
    g = np.empty_like(z)
    for k in range(z.size):
        dz = np.zeros_like(z)
        dz[k] = step
        g[k] = (float(h((z + dz)[None, :])[0]) - float(h((z - dz)[None, :])[0])) / (2 * step)
    return val, g


def _seeds(model: FeatureModel, current: DiscreteMeasure, rng: np.random.Generator,
           score_fn, n_starts: int) -> np.ndarray:
    """Current atoms, normalised lifted data points, and the best Gaussian probes."""
    D = model.space.dimension
    seeds = []
    if current.size:
        order = np.argsort(-np.abs(current.weights), kind="stable")[: n_starts // 4]
        seeds.extend(current.locations[order])
    X = model.X
    n_data = min(n_starts // 4, X.shape[0])
    idx = rng.choice(X.shape[0], size=n_data, replace=False)
    for i in idx:
        v = X[i] / np.linalg.norm(X[i])
        seeds.append(v if rng.random() < 0.5 else -v)
    pool = rng.standard_normal((PROBE_POOL, D))
    pool /= np.linalg.norm(pool, axis=1, keepdims=True)
    pool *= rng.uniform(0.25, 2.0, size=(PROBE_POOL, 1))
    scores = score_fn(pool)
    top = np.argsort(-scores, kind="stable")[: max(0, n_starts - len(seeds))]
    seeds.extend(pool[top])
    return np.array(seeds[:n_starts]).reshape(-1, D)


def _ascend(fun_grad, z0: np.ndarray, ftol: float = 1e-15) -> tuple[np.ndarray, float]:
    res = minimize(lambda z: _neg(fun_grad, z), z0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 300, "ftol": ftol, "gtol": 1e-12})
    return res.x, -float(res.fun)


def _neg(fun_grad, z):
    v, g = fun_grad(z)
    return -v, -g


def _dirac_search(cert: Certificate, denom, denom_grad, current, rng, n_starts):
    """Distinct local maxima of ``s eta(z) / denom(z)`` over both signs, best first.

    Entries are ``(score, z, s)``; ties are broken by the lexicographically
    smallest location.
    """
    model = cert.model

    def score_all(Z):
        return np.abs(cert.value(Z)) / denom(Z)

    seeds = _seeds(model, current, rng, score_all, n_starts)
    found = []
    for z0 in seeds:
        v0 = float(cert.value(z0[None, :])[0])
        for s in ((1.0, -1.0) if v0 == 0 else (float(np.sign(v0)),)):
            def fg(z, s=s):
                val, grad = cert.value_grad(z)
                dn = float(denom(z[None, :])[0])
                dg = denom_grad(z[None, :])[0]
                return s * val / dn, s * (grad / dn - val * dg / dn ** 2)
            z, sc = _ascend(fg, z0)
            if np.all(np.isfinite(z)):
                found.append((sc, z, s))
    found.sort(key=lambda t: (-t[0], tuple(t[1])))
    distinct = []
    for sc, z, s in found:
        if all(s != s2 or np.linalg.norm(z - z2) > 1e-6 * (1.0 + np.linalg.norm(z))
               for _, z2, s2 in distinct):
            distinct.append((sc, z, s))
    return distinct


def insert_dirac(prob: Problem, current: DiscreteMeasure, *, model: FeatureModel | None = None,
                 extra=None, seed: int = 0, n_starts: int = N_STARTS) -> Candidate | None:
    """Best ``s delta_z / (beta (1 + d(z, e)^p))`` by the ratio ``|eta(z)| / (1 + d(z, e)^p)``.

    Returns ``None`` when that ratio stays below ``beta (1 + EPS_CERT)``.
    Used for ``alpha = 0`` and, with the KRu subgradients in ``extra``, for fusion.
    """
    model = model or FeatureModel(prob)
    current = canonicalize(current)
    beta = prob.params.beta
    if extra:
        cert = Certificate(model, current, extra)
        denom, denom_grad = model.unit_cost, model.unit_cost_grad
    else:
        # the ratio is computed inside the feature, as in the TV problem
        cert = Certificate(model, current, normalised=True)
        denom = lambda Z: np.ones(np.atleast_2d(Z).shape[0])  # noqa: E731
        denom_grad = lambda Z: np.zeros_like(np.atleast_2d(Z))  # noqa: E731
    if cert.trivial:
        return None
    rng = np.random.default_rng(seed)
    found = _dirac_search(cert, denom, denom_grad, current, rng, n_starts)
    if not found:
        return None
    sc, z, s = found[0]
    if sc <= beta * (1.0 + EPS_CERT):
        return None
    # descent orientation: <eta, candidate> < 0
    w = -s / (beta * float(model.unit_cost(z)[0]))
    return Candidate("dirac", dirac(prob.space, z, w), float(sc), beta,
                     (tuple(map(float, z)),))


def _greedy_pairs(pos, neg, n_pairs):
    """Rank-matched pairs plus every pairing with the strongest atom of either sign."""
    if not pos or not neg:
        return []
    pairs = []
    for k in range(min(len(pos), len(neg), n_pairs)):
        pairs.append((k, k))
    for k in range(min(len(neg), n_pairs)):
        pairs.append((0, k))
    for k in range(min(len(pos), n_pairs)):
        pairs.append((k, 0))
    seen, out = set(), []
    for pr in pairs:
        if pr not in seen:
            seen.add(pr)
            out.append(pr)
    return out


def insert_dipole(prob: Problem, current: DiscreteMeasure, *, model: FeatureModel | None = None,
                  seed: int = 0, n_starts: int = N_STARTS, n_pairs: int = 4) -> Candidate | None:
    """Best extremal point among signed dipoles, normalised Diracs and the base atom (``alpha > 0``).

    Dipole scores are ``|eta(x) - eta(y)| / (alpha d(x, y) + beta (2 + d(x,e)^p + d(y,e)^p))``;
    pairs are seeded from the strongest positive and negative Dirac maxima.
    Returns ``None`` when no score exceeds ``1 + EPS_CERT``.
    """
    model = model or FeatureModel(prob)
    current = canonicalize(current)
    cert = Certificate(model, current)
    if cert.trivial:
        return None
    par = prob.params
    space = prob.space
    alpha, beta = par.alpha, par.beta
    e = space.base
    rng = np.random.default_rng(seed)

    def ddenom(Z):
        return alpha * (1.0 + space.distance_to_base(Z)) + beta * model.unit_cost(Z)

    def ddenom_grad(Z):
        return alpha * _dist_grad(space, Z, e) + beta * model.unit_cost_grad(Z)

    found = _dirac_search(cert, ddenom, ddenom_grad, current, rng, n_starts)
    options: list[tuple[float, str, tuple]] = []
    if found:
        sc, z, s = found[0]
        options.append((sc, "dirac", (z, s)))
    eta_e = float(cert.value(e[None, :])[0])
    options.append((abs(eta_e) / (alpha + beta), "base", (np.sign(eta_e) or 1.0,)))

    pos = [t for t in found if t[2] > 0]
    neg = [t for t in found if t[2] < 0]
    D = space.dimension

    def pair_fg(v):
        x, y = v[:D], v[D:]
        vx, gx = cert.value_grad(x)
        vy, gy = cert.value_grad(y)
        dn = (alpha * float(space.distance(x, y))
              + beta * float(model.unit_cost(x)[0] + model.unit_cost(y)[0]))
        num = vx - vy
        gd = _dist_grad(space, x[None, :], y)[0]
        gnx = alpha * gd + beta * model.unit_cost_grad(x)[0]
        gny = -alpha * gd + beta * model.unit_cost_grad(y)[0]
        return num / dn, np.concatenate([gx / dn - num * gnx / dn ** 2, -gy / dn - num * gny / dn ** 2])

    for i, j in _greedy_pairs(pos, neg, n_pairs):
        # x carries the positive certificate, y the negative one
        v, sc = _ascend(pair_fg, np.concatenate([pos[i][1], neg[j][1]]), ftol=1e-13)
        x, y = v[:D], v[D:]
        if np.linalg.norm(x - y) <= 1e-8 * (1.0 + np.linalg.norm(x)):
            continue  # collapsed pair
        options.append((sc, "dipole", (x, y)))
    options.sort(key=lambda t: (-t[0], t[1]))
    sc, kind, data = options[0]
    if sc <= 1.0 + EPS_CERT:
        return None
    # the certificate decreases along -E, so the inserted point has the opposite orientation
    if kind == "dirac":
        z, s = data
        m = dirac(space, z, -s * extremal_dirac_scale(space, z, par))
        locs = (tuple(map(float, z)),)
    elif kind == "base":
        m = dirac(space, e, -data[0] * extremal_base_mass(par))
        locs = (tuple(map(float, e)),)
    else:
        x, y = data
        a = extremal_dipole_scale(space, x, y, 0.0, par)
        m = dipole(space, y, x, a)
        locs = (tuple(map(float, y)), tuple(map(float, x)))
    return Candidate(kind, m, float(sc), 1.0, locs)


def _dist_grad(space, Z, y):
    """Gradient in ``z`` of ``||z - y||^s`` (zero at ``z = y``)."""
    diff = np.atleast_2d(Z) - np.ravel(y)[None, :]
    nrm = np.linalg.norm(diff, axis=1, keepdims=True)
    s = space.metric_exponent
    with np.errstate(divide="ignore", invalid="ignore"):
        g = s * nrm ** (s - 2.0) * diff
    return np.where(nrm > 0, g, 0.0)


def fusion_extra(prob: Problem, current: DiscreteMeasure) -> list:
    """Linear terms ``alpha c_k h_k`` from KRu subgradients of the distance terms."""
    out = []
    for coef, ref in prob.references:
        if coef > 0 and prob.params.alpha > 0:
            out.append((prob.params.alpha * coef, kru_dual_function(current - ref)))
    return out
