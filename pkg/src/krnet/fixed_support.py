"""Convex re-optimisation of the weights on a fixed, finite support.

Three exact reformulations cover the problems the outer loop produces:

* ``alpha = 0``: a weighted lasso in normalised coordinates ``u_k = w_k (1 + d(z_k, e)^p)``.
* ``alpha > 0`` without references: a nonnegative lasso over the finite extremal
  dictionary on ``support + {e}`` (signed dipoles between support points,
  normalised Diracs, the base atom).  The KRu norm is the minimal dipole
  decomposition cost, so this dictionary problem has the same optimal value
  as the measure problem restricted to that support.
* references present (fusion): proximal subgradient on the weights, with the
  exact KRu subgradient of every distance term.

Squared losses use FISTA with adaptive restart; absolute losses become linear
programs solved by HiGHS.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .measure import DiscreteMeasure, canonicalize, measure
from .problem import FeatureModel, Problem, loss_value, objective
from .transport import kru_transport, solve_transport


STALL_ITERS = 200


@dataclass
class FixedSupportResult:
    measure: DiscreteMeasure
    iterations: int
    converged: bool
    stationarity: float


@dataclass
class Piece:
    """One term of an extremal decomposition: ``coef * (delta_x - delta_y)``, a Dirac or the base atom."""

    kind: str  # "dipole" | "dirac" | "base"
    measure: DiscreteMeasure
    cost: float


# ---------------------------------------------------------------- generic FISTA

def _fista(M: np.ndarray, y: np.ndarray, scale: float, pen: np.ndarray, x0: np.ndarray,
           nonneg: bool, max_iter: int, tol: float) -> tuple[np.ndarray, int, bool, float]:
    """Minimise ``scale ||y - M x||^2 + sum_j pen_j |x_j|`` (``x >= 0`` if ``nonneg``).

    Returns the best iterate, iterations used, convergence flag and the final
    gradient-mapping norm.
    """
    J = M.shape[1]
    if J == 0 or scale == 0.0:
        x = np.zeros(J)
        return x, 0, True, 0.0
    L = 2.0 * scale * np.linalg.norm(M, 2) ** 2
    if not L > 0:
        return np.zeros(J), 0, True, 0.0
    step = 1.0 / L

    def f(x):
        r = y - M @ x
        return scale * float(r @ r) + float(pen @ np.abs(x))

    def grad(x):
        return -2.0 * scale * (M.T @ (y - M @ x))

    def prox(v):
        if nonneg:
            return np.maximum(v - step * pen, 0.0)
        return np.sign(v) * np.maximum(np.abs(v) - step * pen, 0.0)

    x = np.maximum(x0, 0.0) if nonneg else x0.astype(float).copy()
    best, best_f = x.copy(), f(x)
    z, t = x.copy(), 1.0
    prev = best_f
    stat = np.inf
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        x_new = prox(z - step * grad(z))
        fx = f(x_new)
        if fx > prev:  # adaptive restart on objective increase
            z, t = x.copy(), 1.0
            x_new = prox(z - step * grad(z))
            fx = f(x_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if fx < best_f:
            best, best_f = x.copy(), fx
        stat = float(np.max(np.abs(x - prox(x - step * grad(x))))) * L
        if it > 10 and abs(prev - fx) <= tol * max(1.0, abs(fx)) and stat <= 1e-6:
            converged = True
            break
        prev = fx
    return best, it, converged, stat


def _polish_lasso(M, y, scale, pen, x, nonneg):
    """Solve the KKT system on the active set with the current signs; keep it if it is better."""
    active = np.flatnonzero(x != 0)
    if active.size == 0 or scale == 0.0:
        return x
    s = np.sign(x[active])
    Ma = M[:, active]
    H = 2.0 * scale * (Ma.T @ Ma)
    rhs = 2.0 * scale * (Ma.T @ y) - pen[active] * s
    try:
        xa = np.linalg.solve(H, rhs)
    except np.linalg.LinAlgError:
        return x
    if not np.all(np.sign(xa) == s):
        return x
    cand = np.zeros_like(x)
    cand[active] = xa

    def f(v):
        r = y - M @ v
        return scale * float(r @ r) + float(pen @ np.abs(v))

    return cand if f(cand) <= f(x) else x


def _l1_lp(M, y, scale, pen, nonneg):
    """``min scale sum_i |y_i - (M x)_i| + sum_j pen_j |x_j|`` as an LP (HiGHS)."""
    N, J = M.shape
    if J == 0:
        return np.zeros(0)
    if scale == 0.0:
        return np.zeros(J)
    # variables: x+ (J), x- (J, absent if nonneg), t (N)
    if nonneg:
        A = M
        c = np.concatenate([pen, np.full(N, scale)])
    else:
        A = np.hstack([M, -M])
        c = np.concatenate([pen, pen, np.full(N, scale)])
    nv = A.shape[1]
    I = np.eye(N)
    A_ub = np.vstack([np.hstack([A, -I]), np.hstack([-A, -I])])
    b_ub = np.concatenate([y, -y])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(0, None)] * (nv + N), method="highs")
    if res.status != 0:
        return None
    sol = res.x[:nv]
    return sol if nonneg else sol[:J] - sol[J:]


# ---------------------------------------------------------------- alpha = 0

def _solve_tv(model: FeatureModel, prob: Problem, Z: np.ndarray, w0: np.ndarray,
              max_inner: int, tol_inner: float) -> tuple[np.ndarray, int, bool, float]:
    # normalised coordinates u = w (1 + d^r): features phi / (1 + d^r), unit penalty beta
    unit = model.unit_cost(Z)
    Psi = model.psi(Z)
    u0 = w0 * unit
    pen = np.full(Z.shape[0], prob.params.beta)
    if prob.loss == "squared":
        u, it, conv, stat = _fista(Psi, model.y, model.scale, pen, u0, False, max_inner, tol_inner)
        u = _polish_lasso(Psi, model.y, model.scale, pen, u, False)
    else:
        u = _l1_lp(Psi, model.y, model.scale, pen, False)
        it, conv, stat = 1, u is not None, 0.0
        if u is None:
            u, conv = u0, False
    return u / unit, it, conv, stat


# ---------------------------------------------------------------- alpha > 0 dictionary

def _dictionary(model: FeatureModel, prob: Problem, P: np.ndarray, e_idx: int):
    """Columns (as weight vectors over ``P``) and penalties of the extremal dictionary."""
    par = prob.params
    space = prob.space
    K = P.shape[0]
    c = 1.0 + space.distance_to_base(P) ** par.p
    c[e_idx] = 1.0
    de = space.distance_to_base(P)
    D = space.pairwise(P, P)
    cols, costs, keys = [], [], []
    for i in range(K):
        for j in range(K):
            if i == j:
                continue
            v = np.zeros(K)
            v[i], v[j] = 1.0, -1.0
            cols.append(v)
            costs.append(par.alpha * D[i, j] + par.beta * (c[i] + c[j]))
            keys.append(("dipole", i, j))
    for i in range(K):
        for sgn in (1.0, -1.0):
            v = np.zeros(K)
            v[i] = sgn
            cols.append(v)
            if i == e_idx:
                costs.append(par.alpha + par.beta)
                keys.append(("base", i, sgn))
            else:
                costs.append(par.alpha * (de[i] + 1.0) + par.beta * c[i])
                keys.append(("dirac", i, sgn))
    return np.array(cols).T, np.array(costs), keys


def extremal_decomposition(m: DiscreteMeasure, prob: Problem) -> list[Piece]:
    """Split ``m`` into dipoles, Diracs and a base atom whose penalties add up to ``G(m)``.

    For ``alpha = 0`` the pieces are the atoms themselves.  Otherwise they come
    from the optimal plan of the balanced part; plan edges ending at the base
    point are merged with base mass of the opposite sign into pure Diracs, so
    that no mass cancels at ``e``.
    """
    m = canonicalize(m)
    par = prob.params
    space = prob.space
    r = par.moment_order
    if m.size == 0:
        return []

    def mcost(loc):
        return 1.0 + float(space.distance_to_base(loc)) ** r

    if par.alpha == 0:
        return [Piece("dirac", measure(space, loc[None, :], [w]), par.beta * abs(w) * mcost(loc))
                for loc, w in zip(m.locations, m.weights)]
    res, c = kru_transport(m)
    e = space.base
    X, Y = res.sources.locations, res.sinks.locations
    is_e_src = np.all(X == e, axis=1) if X.size else np.zeros(0, bool)
    is_e_snk = np.all(Y == e, axis=1) if Y.size else np.zeros(0, bool)
    edges = [[i, j, g] for i, j, g in res.plan]
    pieces: list[Piece] = []
    remaining_c = c
    if c > 0 and is_e_snk.any():
        # edges x -> e are dipoles g(delta_x - delta_e); pair them with +g delta_e
        budget = c
        for ed in edges:
            i, j, g = ed
            if budget <= 0 or not is_e_snk[j]:
                continue
            take = min(g, budget)
            pieces.append(_dirac_piece(space, X[i], take, par, mcost))
            ed[2] -= take
            budget -= take
        remaining_c = budget
    elif c < 0 and is_e_src.any():
        budget = -c
        for ed in edges:
            i, j, g = ed
            if budget <= 0 or not is_e_src[i]:
                continue
            take = min(g, budget)
            pieces.append(_dirac_piece(space, Y[j], -take, par, mcost))
            ed[2] -= take
            budget -= take
        remaining_c = -budget
    for i, j, g in edges:
        if g <= 0:
            continue
        mx = measure(space, np.vstack([X[i], Y[j]]), [g, -g])
        cost = par.alpha * g * float(space.distance(X[i], Y[j])) + par.beta * g * (mcost(X[i]) + mcost(Y[j]))
        pieces.append(Piece("dipole", mx, cost))
    if remaining_c != 0:
        pieces.append(Piece("base", measure(space, e[None, :], [remaining_c]),
                            (par.alpha + par.beta) * abs(remaining_c)))
    return pieces


def _dirac_piece(space, loc, w, par, mcost):
    d = float(space.distance_to_base(loc))
    return Piece("dirac", measure(space, np.asarray(loc)[None, :], [w]),
                 abs(w) * (par.alpha * (1.0 + d) + par.beta * mcost(loc)))


def _pieces_to_lambda(pieces: list[Piece], P: np.ndarray, keys) -> np.ndarray:
    index = {tuple(p): k for k, p in enumerate(map(tuple, P))}
    lookup = {k: n for n, k in enumerate(keys)}
    lam = np.zeros(len(keys))
    for pc in pieces:
        locs, ws = pc.measure.locations, pc.measure.weights
        if pc.kind == "dipole":
            ip = int(np.argmax(ws))
            i, j = index[tuple(locs[ip])], index[tuple(locs[1 - ip])]
            n = lookup[("dipole", i, j)]
        else:
            i = index[tuple(locs[0])]
            n = lookup[(pc.kind, i, float(np.sign(ws[0])))]
        lam[n] += pc.cost
    return lam


def _solve_dictionary(model: FeatureModel, prob: Problem, Z: np.ndarray, init: DiscreteMeasure,
                      max_inner: int, tol_inner: float):
    space = prob.space
    e = space.base
    P = np.unique(np.vstack([Z.reshape(-1, space.dimension), e[None, :]]), axis=0)
    e_idx = int(np.flatnonzero(np.all(P == e, axis=1))[0])
    E, costs, keys = _dictionary(model, prob, P, e_idx)
    B = E / costs[None, :]
    M = model.phi(P) @ B
    lam0 = np.zeros(len(keys))
    if init.size:
        inside = all(tuple(l) in set(map(tuple, P)) for l in init.locations)
        if inside:
            lam0 = _pieces_to_lambda(extremal_decomposition(init, prob), P, keys)
    pen = np.ones(len(keys))
    if prob.loss == "squared":
        lam, it, conv, stat = _fista(M, model.y, model.scale, pen, lam0, True, max_inner, tol_inner)
    else:
        lam = _l1_lp(M, model.y, model.scale, pen, True)
        it, conv, stat = 1, lam is not None, 0.0
        if lam is None:
            lam, conv = lam0, False
    w = B @ lam
    return measure(space, P, w), it, conv, stat


# ---------------------------------------------------------------- references (fusion)

class _KRuTerm:
    """``w -> ||sum_k w_k delta_{z_k} - ref||_KRu`` and a subgradient, on a fixed node set.

    The nodes (support, reference atoms and the base point) and their cost
    matrix are computed once, so each evaluation is a single transport solve.
    """

    def __init__(self, space, Z: np.ndarray, ref: DiscreteMeasure):
        nodes = np.unique(np.vstack([Z, ref.locations, space.base[None, :]]), axis=0)
        index = {tuple(p): i for i, p in enumerate(nodes)}
        self.zi = np.array([index[tuple(z)] for z in Z], dtype=int)
        self.ei = index[tuple(space.base)]
        self.rv = np.zeros(nodes.shape[0])
        for loc, w in zip(ref.locations, ref.weights):
            self.rv[index[tuple(loc)]] += w
        self.C = space.pairwise(nodes, nodes)

    def __call__(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        nu = -self.rv.copy()
        np.add.at(nu, self.zi, w)
        mass = float(nu.sum())
        nu[self.ei] -= mass
        sign = float(np.sign(mass))
        pos, neg = np.flatnonzero(nu > 0), np.flatnonzero(nu < 0)
        if pos.size == 0 or neg.size == 0:
            return abs(mass), np.full(self.zi.size, sign)
        a, b = nu[pos], -nu[neg]
        gap = float(a.sum() - b.sum())  # roundoff only
        if gap > 0:
            a[np.argmax(a)] -= gap
        elif gap < 0:
            b[np.argmax(b)] += gap
        cost, _, _, v = solve_transport(a, b, self.C[np.ix_(pos, neg)])
        # c-transform of the sink potentials, shifted to the base point
        f = np.min(-v[None, :] + self.C[:, neg], axis=1)
        h = f - f[self.ei] + sign
        return abs(mass) + cost, h[self.zi]


def _solve_references(model: FeatureModel, prob: Problem, Z: np.ndarray, w0: np.ndarray,
                      max_inner: int, tol_inner: float):
    par = prob.params
    cost = par.beta * model.unit_cost(Z)
    Phi = model.phi(Z)
    terms = [(par.alpha * c, _KRuTerm(prob.space, Z, r)) for c, r in prob.references if c > 0]

    def evaluate(w):
        """Objective value and a subgradient of the non-prox part."""
        f = Phi @ w
        val = prob.data_weight * float(np.mean(loss_value(prob.loss, model.y, f)))
        val += float(cost @ np.abs(w))
        g = model.scale * (model.loss_grad(f) @ Phi)
        for coef, term in terms:
            kv, h = term(w)
            val += coef * kv
            g = g + coef * h
        return val, g

    L = 2.0 * model.scale * np.linalg.norm(Phi, 2) ** 2 if prob.loss == "squared" else 0.0
    scale_w = max(1.0, float(np.max(np.abs(w0))) if w0.size else 1.0)
    gamma0 = 1.0 / L if L > 0 else 0.1 * scale_w
    w = w0.astype(float).copy()
    fw, g = evaluate(w)
    best, best_f = w.copy(), fw
    since_best = 0
    it = 0
    for it in range(1, max_inner + 1):
        gamma = gamma0 / np.sqrt(it)
        v = w - gamma * g
        w = np.sign(v) * np.maximum(np.abs(v) - gamma * cost, 0.0)
        fw, g = evaluate(w)
        if fw < best_f - tol_inner * max(1.0, abs(best_f)):
            best, best_f = w.copy(), fw
            since_best = 0
        else:
            if fw < best_f:
                best, best_f = w.copy(), fw
            since_best += 1
            if since_best >= STALL_ITERS:
                break
    return best, it, since_best >= STALL_ITERS, float("nan")


# ---------------------------------------------------------------- entry point

def solve_fixed_support(prob: Problem, support, init: DiscreteMeasure | np.ndarray | None = None,
                        *, model: FeatureModel | None = None, max_inner: int = 5000,
                        tol_inner: float = 1e-9) -> FixedSupportResult:
    """Re-optimise all weights on ``support`` (``alpha > 0`` also uses the base point).

    ``init`` is either a measure supported inside ``support`` or a weight vector
    aligned with it.  The result never has a larger objective than ``init``.
    """
    model = model or FeatureModel(prob)
    space = prob.space
    Z = np.unique(np.asarray(support, dtype=float).reshape(-1, space.dimension), axis=0)
    if isinstance(init, DiscreteMeasure):
        init_m = canonicalize(init)
    else:
        w_init = np.zeros(Z.shape[0]) if init is None else np.asarray(init, dtype=float)
        init_m = measure(space, np.asarray(support, dtype=float).reshape(-1, space.dimension), w_init)
    pos = {tuple(z): k for k, z in enumerate(Z)}
    w0 = np.zeros(Z.shape[0])
    outside = []
    for loc, w in zip(init_m.locations, init_m.weights):
        k = pos.get(tuple(loc))
        if k is None:
            outside.append(loc)
        else:
            w0[k] = w
    if outside:
        Z = np.vstack([Z, np.array(outside)])
        w0 = np.concatenate([w0, [w for loc, w in zip(init_m.locations, init_m.weights)
                                  if tuple(loc) not in pos]])
    par = prob.params
    if prob.references and par.alpha > 0:
        w, it, conv, stat = _solve_references(model, prob, Z, w0, max_inner, tol_inner)
        out = measure(space, Z, w)
    elif par.alpha > 0:
        out, it, conv, stat = _solve_dictionary(model, prob, Z, measure(space, Z, w0),
                                                max_inner, tol_inner)
    else:
        w, it, conv, stat = _solve_tv(model, prob, Z, w0, max_inner, tol_inner)
        out = measure(space, Z, w)
    start = measure(space, Z, w0)
    if objective(out, prob) > objective(start, prob):
        out, conv = start, False
    return FixedSupportResult(out, it, conv, stat)
