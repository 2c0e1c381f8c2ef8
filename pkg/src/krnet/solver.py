"""Fully corrective conditional gradient over the representer dictionary.

Each outer round inserts the extremal point chosen by the certificate oracle,
re-optimises every weight on the enlarged support, prunes negligible atoms and,
when there are more pieces than data points, applies a Caratheodory reduction
that keeps the data fit and does not increase the penalty.  For ``alpha = 0``
plain problems the atom locations are additionally refined by a joint smooth
descent ("sliding") that is kept only if it lowers the objective.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog, minimize

from .errors import IllPosednessWarning, InvalidParameter
from .fixed_support import Piece, extremal_decomposition, solve_fixed_support
from .insertion import Candidate, fusion_extra, insert_dipole, insert_dirac
from .measure import DiscreteMeasure, add, canonicalize, empty, measure, scale
from .problem import FeatureModel, Problem, objective, shifted_problem
from .regularizer import P1_BANNER

MONOTONE_SLACK = 1e-10


@dataclass
class SolveReport:
    """Outcome of a solve.

    ``certificate_gap`` is a heuristic: the best score found by multi-start local
    search minus the stopping threshold.  It is not a rigorous optimality bound.
    """

    measure: DiscreteMeasure
    objective_trace: list[float]
    certificate_gap: float | None
    iterations: int
    atom_count: int
    wall_time: float
    stop_reason: str = ""
    candidates: list[Candidate] = field(default_factory=list)
    pieces: list[Piece] = field(default_factory=list)
    solver_measure: DiscreteMeasure | None = None
    warnings: list[str] = field(default_factory=list)
    inner_converged: bool = True

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def certificate_is_heuristic(self) -> bool:
        return True


def _prune(m: DiscreteMeasure, tol: float) -> DiscreteMeasure:
    m = canonicalize(m)
    if m.size == 0:
        return m
    keep = np.abs(m.weights) >= tol * np.max(np.abs(m.weights))
    return measure(m.space, m.locations[keep], m.weights[keep])


def _reduce(m: DiscreteMeasure, prob: Problem, model: FeatureModel) -> tuple[DiscreteMeasure, list[Piece]]:
    """Caratheodory step: at most ``N`` pieces with the same data fit and no larger penalty."""
    pieces = extremal_decomposition(m, prob)
    N = model.N
    if len(pieces) <= N:
        return m, pieces
    A = np.column_stack([model.predictions(p.measure) for p in pieces])
    costs = np.array([p.cost for p in pieces])
    target = A.sum(axis=1)
    res = linprog(costs, A_eq=A, b_eq=target, bounds=[(0, None)] * len(pieces), method="highs-ds")
    if res.status != 0:
        return m, pieces
    basis = np.flatnonzero(res.x > 1e-12 * max(1.0, float(np.max(res.x))))
    if basis.size > N:
        return m, pieces
    # recompute the basic coefficients exactly so the data fit is preserved to roundoff
    t, *_ = np.linalg.lstsq(A[:, basis], target, rcond=None)
    if np.any(t < 0):
        t = res.x[basis]
    out = empty(prob.space)
    kept = []
    for k, tk in zip(basis, t):
        pm = scale(pieces[k].measure, tk)
        out = add(out, pm)
        kept.append(Piece(pieces[k].kind, pm, pieces[k].cost * tk))
    if objective(out, prob) <= objective(m, prob) + 1e-12 * max(1.0, abs(objective(m, prob))):
        return out, kept
    return m, pieces


def _slide(m: DiscreteMeasure, prob: Problem, model: FeatureModel) -> DiscreteMeasure:
    """Joint descent over locations and weights with frozen signs (``alpha = 0``, squared loss)."""
    m = canonicalize(m)
    if m.size == 0 or model.scale == 0.0:
        return m
    space = prob.space
    D = space.dimension
    K = m.size
    u0 = m.weights * model.unit_cost(m.locations)
    sgn = np.sign(u0)
    beta = prob.params.beta
    X, y, sc = model.X, model.y, model.scale
    act = model.act

    def fg(v):
        Z = v[: K * D].reshape(K, D)
        a = v[K * D:]
        pre = X @ Z.T
        sig = act(pre)
        dsig = act.derivative(pre)
        mw = model.unit_cost(Z)
        dmw = model.unit_cost_grad(Z)
        Psi = sig / mw[None, :]
        u = sgn * a
        r = y - Psi @ u
        val = sc * float(r @ r) + beta * float(a.sum())
        gr = -2.0 * sc * r  # d val / d f
        ga = (gr @ Psi) * sgn + beta
        # d Psi_ik / d z_k = dsig_ik x_i / mw_k - sig_ik dmw_k / mw_k^2
        gz = ((gr[:, None] * dsig).T @ X) / mw[:, None] - (gr @ sig)[:, None] * dmw / mw[:, None] ** 2
        gz *= u[:, None]
        return val, np.concatenate([gz.ravel(), ga])

    v0 = np.concatenate([m.locations.ravel(), np.abs(u0)])
    bounds = [(None, None)] * (K * D) + [(0.0, None)] * K
    res = minimize(fg, v0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": 2000, "ftol": 1e-16, "gtol": 1e-13, "maxcor": 30})
    Z = res.x[: K * D].reshape(K, D)
    u = sgn * res.x[K * D:]
    cand = measure(space, Z, u / model.unit_cost(Z))
    if cand.size == 0:
        return m
    # re-solve the weights exactly at the new locations
    cand = solve_fixed_support(prob, cand.locations, cand, model=model).measure
    return cand if objective(cand, prob) < objective(m, prob) else m


def _warn_ill_posed(prob: Problem, notes: list[str]) -> None:
    if prob.params.ill_posed and prob.activation.positively_homogeneous:
        warnings.warn(P1_BANNER, IllPosednessWarning, stacklevel=3)
        notes.append(P1_BANNER)


def conditional_gradient_solve(prob: Problem, max_outer: int = 200, *, tol_outer: float = 1e-8,
                               prune_tol: float = 1e-10, seed: int = 0,
                               init: DiscreteMeasure | None = None, slide: bool = True,
                               max_inner: int = 5000, tol_inner: float = 1e-9) -> SolveReport:
    """Minimise :func:`objective` by insertion + fully corrective re-solves."""
    if prob.moment_on == "solution_minus_first_reference":
        return solve_distillation(prob, max_outer, tol_outer=tol_outer, prune_tol=prune_tol,
                                  seed=seed, slide=slide, max_inner=max_inner, tol_inner=tol_inner)
    t0 = time.perf_counter()
    notes: list[str] = []
    _warn_ill_posed(prob, notes)
    model = FeatureModel(prob)
    par = prob.params
    refs = [(c, r) for c, r in prob.references if c > 0]
    with_refs = bool(refs) and par.alpha > 0
    if init is not None:
        mu = canonicalize(init)
    elif refs:
        total = sum(c for c, _ in refs)
        mu = empty(prob.space)
        for c, r in refs:
            mu = add(mu, scale(r, c / total))
    else:
        mu = empty(prob.space)
    obj = objective(mu, prob)
    trace = [obj]
    candidates: list[Candidate] = []
    stop_reason = "budget"
    gap = None
    slow_rounds = 0
    inner_ok = True
    it = 0
    for it in range(1, max_outer + 1):
        if par.alpha > 0 and not with_refs:
            cand = insert_dipole(prob, mu, model=model, seed=seed + it)
        else:
            extra = fusion_extra(prob, mu) if with_refs else None
            cand = insert_dirac(prob, mu, model=model, extra=extra, seed=seed + it)
        if cand is None:
            stop_reason = "certificate"
            gap = 0.0
            it -= 1
            break
        candidates.append(cand)
        gap = max(0.0, cand.score - cand.threshold * (1.0 + 1e-6))
        support = np.vstack([mu.locations, cand.measure.locations]) if mu.size else cand.measure.locations
        fs = solve_fixed_support(prob, support, mu, model=model, max_inner=max_inner, tol_inner=tol_inner)
        inner_ok &= fs.converged
        new = _prune(fs.measure, prune_tol)
        if par.alpha == 0 and not with_refs and slide and prob.loss == "squared":
            new = _slide(new, prob, model)
            new = _prune(new, prune_tol)
        if not with_refs:
            new, _ = _reduce(new, prob, model)
        new_obj = objective(new, prob)
        if new_obj > obj:
            new, new_obj = mu, obj
        rel = (obj - new_obj) / max(abs(obj), 1e-300)
        mu, obj = new, new_obj
        trace.append(obj)
        slow_rounds = slow_rounds + 1 if rel < tol_outer else 0
        if slow_rounds >= 3:
            stop_reason = "stagnation"
            break
    pieces = extremal_decomposition(mu, prob) if not with_refs else []
    solver_measure = model.to_tv(mu) if model.weighted else None
    return SolveReport(mu, trace, gap, it, mu.size, time.perf_counter() - t0, stop_reason,
                       candidates, pieces, solver_measure, notes, inner_ok)


def solve_distillation(prob: Problem, max_outer: int = 200, **kw) -> SolveReport:
    """Solve for ``nu = mu - mu*`` on residual labels, then return ``nu + mu*``."""
    shifted, teacher = shifted_problem(prob)
    rep = conditional_gradient_solve(shifted, max_outer, **kw)
    mu = add(rep.measure, teacher)
    # the shifted objective at nu equals the original objective at nu + mu*,
    # so the trace carries over unchanged
    return replace(rep, measure=mu, atom_count=mu.size)


def solve_fusion(prob: Problem, max_outer: int = 200, **kw) -> SolveReport:
    """Perturbed KR barycentre: data fit plus ``alpha sum_k c_k ||mu - ref_k||_KRu``."""
    if len(prob.references) < 2:
        raise InvalidParameter("fusion needs at least two reference measures")
    if prob.moment_on != "solution":
        raise InvalidParameter("fusion penalises the moments of the solution itself")
    return conditional_gradient_solve(prob, max_outer, **kw)
