"""Exact 1-Wasserstein transport between discrete measures and the KR / KRu norms.

The balanced problem is solved by the transportation (network) simplex on the
complete bipartite graph: a spanning-tree basis, node potentials from the tree,
Dantzig pricing with a Bland fallback against degenerate cycling.  Every result
is certified (marginals, dual feasibility, complementary slackness, zero duality
gap) before it is returned.

Potentials live on support points only.  On a finite support the LP dual over
those points attains the supremum over all 1-Lipschitz functions, and
:func:`kru_dual_function` extends them to all of ``R^D`` by the c-transform
``f(z) = min_j (psi_j + d(z, y_j))``, which is 1-Lipschitz for any metric.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .errors import CertificationError, InvalidMeasure, OracleSizeExceeded, UnbalancedInput
from .measure import (DiscreteMeasure, PointedSpace, _check_same, add, balance_split,
                      canonicalize, jordan_split, scale, total_mass, tv_norm)

CERT_TOL = 1e-9
MASS_RTOL = 1e-12
ORACLE_MAX_SUPPORT = 9


@dataclass(frozen=True)
class TransportResult:
    """Optimal plan between ``sources`` and ``sinks`` with Kantorovich potentials.

    ``source_potentials[i] - sink_potentials[j] <= d(x_i, y_j)`` for every pair,
    with equality on plan edges.
    """

    cost: float
    plan: list[tuple[int, int, float]]
    source_potentials: np.ndarray
    sink_potentials: np.ndarray
    sources: DiscreteMeasure
    sinks: DiscreteMeasure

    @property
    def dual_value(self) -> float:
        return float(self.sources.weights @ self.source_potentials
                     - self.sinks.weights @ self.sink_potentials)

    def plan_matrix(self) -> np.ndarray:
        P = np.zeros((self.sources.size, self.sinks.size))
        for i, j, mass in self.plan:
            P[i, j] += mass
        return P

    def certify(self, tol: float = CERT_TOL) -> None:
        """Raise :class:`CertificationError` unless all optimality conditions hold."""
        if self.sources.size == 0 and self.sinks.size == 0:
            return
        _certify(self.sources.weights, self.sinks.weights,
                 self.sources.space.pairwise(self.sources.locations, self.sinks.locations),
                 self.plan, self.source_potentials, -self.sink_potentials, tol)


def _certify(a, b, C, plan, u, v, tol):
    P = np.zeros_like(C)
    for i, j, mass in plan:
        if not mass > 0:
            raise CertificationError(f"non-positive plan mass {mass} on edge ({i}, {j})")
        P[i, j] += mass
    if np.max(np.abs(P.sum(axis=1) - a)) > tol or np.max(np.abs(P.sum(axis=0) - b)) > tol:
        raise CertificationError("plan marginals do not match the input weights")
    red = C - u[:, None] - v[None, :]
    if red.min() < -tol:
        raise CertificationError(f"dual infeasibility {red.min():.3e}")
    for i, j, _ in plan:
        if abs(red[i, j]) > tol:
            raise CertificationError(f"complementary slackness violated on ({i}, {j})")
    primal = float(np.sum(P * C))
    dual = float(a @ u + b @ v)
    if abs(primal - dual) > tol * max(1.0, abs(primal)):
        raise CertificationError(f"duality gap {primal - dual:.3e}")


class _TreeBasis:
    """Spanning-tree basis of the m x n transportation problem.

    Nodes ``0..m-1`` are rows (sources), ``m..m+n-1`` are columns (sinks).
    """

    def __init__(self, a: np.ndarray, b: np.ndarray):
        m, n = len(a), len(b)
        self.m, self.n = m, n
        self.flow: dict[tuple[int, int], float] = {}
        self.adj: list[set[int]] = [set() for _ in range(m + n)]
        ra, rb = a.astype(float).copy(), b.astype(float).copy()
        i = j = 0
        # north-west corner rule; exactly m + n - 1 cells, degenerate zeros kept
        while True:
            x = min(ra[i], rb[j])
            self._add(i, j, x)
            ra[i] -= x
            rb[j] -= x
            if i == m - 1 and j == n - 1:
                break
            if j == n - 1 or (i < m - 1 and ra[i] <= rb[j]):
                i += 1
            else:
                j += 1

    def _add(self, i, j, x):
        self.flow[(i, j)] = x
        self.adj[i].add(self.m + j)
        self.adj[self.m + j].add(i)

    def _remove(self, i, j):
        del self.flow[(i, j)]
        self.adj[i].discard(self.m + j)
        self.adj[self.m + j].discard(i)

    def potentials(self, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m = self.m
        u = np.zeros(m)
        v = np.zeros(self.n)
        seen = [False] * (m + self.n)
        seen[0] = True
        stack = [0]
        while stack:
            node = stack.pop()
            for nb in self.adj[node]:
                if seen[nb]:
                    continue
                seen[nb] = True
                if node < m:
                    v[nb - m] = C[node, nb - m] - u[node]
                else:
                    u[nb] = C[nb, node - m] - v[node - m]
                stack.append(nb)
        return u, v

    def path(self, src: int, dst: int) -> list[int]:
        parent = {src: -1}
        stack = [src]
        while stack:
            node = stack.pop()
            if node == dst:
                break
            for nb in self.adj[node]:
                if nb not in parent:
                    parent[nb] = node
                    stack.append(nb)
        out = [dst]
        while out[-1] != src:
            out.append(parent[out[-1]])
        return out[::-1]

    def pivot(self, i: int, j: int) -> bool:
        """Bring cell (i, j) into the basis; return True if the step was degenerate."""
        m = self.m
        # tree path col j -> row i closes the cycle (i, j) -> ... -> (i, j)
        nodes = self.path(m + j, i)
        cells = []
        for k in range(len(nodes) - 1):
            p, q = nodes[k], nodes[k + 1]
            cells.append((q, p - m) if p >= m else (p, q - m))
        # cycle: +(i, j), then alternately -, +, - ... along the path from j back to i
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(self.flow[c] for c in minus)
        leaving = min((c for c in minus if self.flow[c] == theta))
        for c in minus:
            self.flow[c] -= theta
        for c in plus:
            self.flow[c] += theta
        self._remove(*leaving)
        self._add(i, j, theta)
        return theta == 0.0


def solve_transport(a: np.ndarray, b: np.ndarray, C: np.ndarray, max_iter: int | None = None):
    """Solve ``min <P, C>`` over plans with marginals ``a``, ``b`` (both positive).

    Returns ``(cost, plan, u, v)`` with ``u_i + v_j <= C_ij``.
    """
    m, n = C.shape
    basis = _TreeBasis(a, b)
    scale_c = max(1.0, float(np.max(np.abs(C)))) if C.size else 1.0
    tol = 1e-13 * scale_c
    max_iter = max_iter or 50 * (m + n) ** 2 + 100
    degenerate_run = 0
    for _ in range(max_iter):
        u, v = basis.potentials(C)
        red = C - u[:, None] - v[None, :]
        if degenerate_run > m + n:
            # Bland: first improving cell in index order
            cand = np.flatnonzero(red.reshape(-1) < -tol)
            if cand.size == 0:
                break
            k = int(cand[0])
        else:
            k = int(np.argmin(red))
            if red.reshape(-1)[k] >= -tol:
                break
        i, j = divmod(k, n)
        if basis.pivot(i, j):
            degenerate_run += 1
        else:
            degenerate_run = 0
    else:
        raise CertificationError("transport simplex did not converge")
    u, v = basis.potentials(C)
    plan = [(i, j, x) for (i, j), x in sorted(basis.flow.items()) if x > 0.0]
    cost = float(sum(x * C[i, j] for i, j, x in plan))
    return cost, plan, u, v


def _check_nonnegative(m: DiscreteMeasure, name: str) -> None:
    if np.any(m.weights < 0):
        raise InvalidMeasure(f"{name} must be a nonnegative measure")


def w1_distance(mu_plus: DiscreteMeasure, mu_minus: DiscreteMeasure) -> TransportResult:
    """Exact W1 between two nonnegative measures of equal mass, with certified potentials."""
    _check_same(mu_plus, mu_minus)
    src, snk = canonicalize(mu_plus), canonicalize(mu_minus)
    _check_nonnegative(src, "mu_plus")
    _check_nonnegative(snk, "mu_minus")
    if src.size == 0 and snk.size == 0:
        return TransportResult(0.0, [], np.zeros(0), np.zeros(0), src, snk)
    if src.size == 0 or snk.size == 0:
        raise UnbalancedInput("cannot transport between an empty and a non-empty measure")
    ma, mb = total_mass(src), total_mass(snk)
    if abs(ma - mb) > MASS_RTOL * max(ma, mb):
        raise UnbalancedInput(f"total masses differ: {ma!r} vs {mb!r}")
    C = src.space.pairwise(src.locations, snk.locations)
    cost, plan, u, v = solve_transport(src.weights, snk.weights, C)
    _certify(src.weights, snk.weights, C, plan, u, v, CERT_TOL)
    return TransportResult(cost, plan, u, -v, src, snk)


@lru_cache(maxsize=None)
def _tree_inverses(m: int, n: int):
    """All spanning trees of K_{m,n} as (cells, inverse incidence matrix) pairs."""
    k = m + n - 1
    cells = np.array([(i, j) for i in range(m) for j in range(n)])
    subsets = np.array(list(combinations(range(m * n), k)), dtype=np.int64)
    rows = cells[subsets, 0]  # (S, k) source index of each cell
    cols = cells[subsets, 1]
    S = subsets.shape[0]
    sel = np.arange(S)[:, None]
    idx = np.arange(k)[None, :]
    # incidence rows: m sources then the first n-1 sinks (the last sink row is redundant)
    M = np.zeros((S, k, k))
    M[sel, rows, idx] = 1.0
    mask = cols < n - 1
    M[sel, np.where(mask, m + cols, 0), idx] += mask
    det = np.linalg.det(M)
    trees = np.abs(det) > 0.5  # incidence matrices are totally unimodular
    return cells, subsets[trees], np.linalg.inv(M[trees])


def brute_force_w1(mu_plus: DiscreteMeasure, mu_minus: DiscreteMeasure) -> float:
    """W1 by enumerating every basic solution (spanning tree) of the transportation polytope."""
    _check_same(mu_plus, mu_minus)
    src, snk = canonicalize(mu_plus), canonicalize(mu_minus)
    _check_nonnegative(src, "mu_plus")
    _check_nonnegative(snk, "mu_minus")
    m, n = src.size, snk.size
    if m + n > ORACLE_MAX_SUPPORT:
        raise OracleSizeExceeded(f"support sizes {m}+{n} exceed {ORACLE_MAX_SUPPORT}")
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        raise UnbalancedInput("cannot transport between an empty and a non-empty measure")
    C = src.space.pairwise(src.locations, snk.locations)
    cells, trees, inv = _tree_inverses(m, n)
    rhs = np.concatenate([src.weights, snk.weights[:-1]])
    flows = inv @ rhs  # (T, k)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(rhs))))
    feasible = np.all(flows >= -tol, axis=1)
    tree_cells = cells[trees]  # (T, k, 2)
    costs = np.sum(flows * C[tree_cells[:, :, 0], tree_cells[:, :, 1]], axis=1)
    return float(np.min(costs[feasible]))


def _balance_tol(m: DiscreteMeasure) -> float:
    return MASS_RTOL * tv_norm(m)


def kr_norm(m: DiscreteMeasure) -> float:
    """KR norm of a balanced measure: W1 between its positive and negative parts."""
    m = canonicalize(m)
    if m.size == 0:
        return 0.0
    if abs(total_mass(m)) > _balance_tol(m):
        raise UnbalancedInput("kr_norm needs a balanced measure; use kru_norm")
    return _balanced_transport(m).cost


def _balanced_transport(mu0: DiscreteMeasure) -> TransportResult:
    pos, neg = jordan_split(mu0)
    if pos.size == 0 or neg.size == 0:
        # the balanced part vanishes up to roundoff
        return TransportResult(0.0, [], np.zeros(pos.size), np.zeros(neg.size), pos, neg)
    # roundoff can leave a tiny imbalance; shave it off the heavier side
    gap = total_mass(pos) - total_mass(neg)
    if gap != 0.0:
        if abs(gap) > 1e-9 * max(1.0, tv_norm(mu0)):
            raise CertificationError("balanced part has a non-negligible imbalance")
        pos, neg = _absorb_gap(pos, neg, gap)
    return w1_distance(pos, neg)


def kru_transport(m: DiscreteMeasure) -> tuple[TransportResult, float]:
    """Transport problem of the balanced part ``m - m(Z) delta_e``, together with ``m(Z)``."""
    mu0, c = balance_split(m)
    return _balanced_transport(mu0), c


def _absorb_gap(pos, neg, gap):
    # shave the gap off the heavier side's largest atom; changes the cost by O(gap)
    if gap > 0:
        k = int(np.argmax(pos.weights))
        w = pos.weights.copy()
        w[k] -= gap
        pos = DiscreteMeasure(pos.space, pos.locations, w, _canonical=True)
    else:
        k = int(np.argmax(neg.weights))
        w = neg.weights.copy()
        w[k] += gap
        neg = DiscreteMeasure(neg.space, neg.locations, w, _canonical=True)
    return pos, neg


def kru_norm(m: DiscreteMeasure) -> float:
    """``|m(Z)| + ||m - m(Z) delta_e||_KR``: excess mass is routed to the base point."""
    m = canonicalize(m)
    if m.size == 0:
        return 0.0
    res, c = kru_transport(m)
    return abs(c) + res.cost


def kru_distance(m: DiscreteMeasure, n: DiscreteMeasure) -> float:
    _check_same(m, n)
    return kru_norm(add(m, scale(n, -1.0)))


class KRuDualFunction:
    """``h(z) = min_j (psi_j + d(z, y_j)) - f(e) + t``: a 1-Lipschitz extension of optimal potentials."""

    def __init__(self, space: PointedSpace, sinks: np.ndarray, psi: np.ndarray, t: float):
        self.space = space
        self.sinks = sinks
        self.psi = psi
        self.t = t
        self.f_e = float(self._f(space.base[None, :])[0]) if sinks.shape[0] else 0.0

    def _f(self, pts):
        return np.min(self.psi[None, :] + self.space.pairwise(pts, self.sinks), axis=1)

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, self.space.dimension)
        if self.sinks.shape[0] == 0:
            return np.full(pts.shape[0], self.t)
        return self._f(pts) - self.f_e + self.t

    def value_grad(self, z) -> tuple[float, np.ndarray]:
        """Value and the gradient of the active piece (zero at a kink on a sink)."""
        z = np.ravel(np.asarray(z, dtype=float))
        if self.sinks.shape[0] == 0:
            return self.t, np.zeros_like(z)
        vals = self.psi + self.space.distance(z[None, :], self.sinks)
        j = int(np.argmin(vals))
        diff = z - self.sinks[j]
        r = float(np.linalg.norm(diff))
        s = self.space.metric_exponent
        grad = s * r ** (s - 2.0) * diff if r > 0 else np.zeros_like(z)
        return float(vals[j]) - self.f_e + self.t, grad


def kru_value_and_dual(m: DiscreteMeasure) -> tuple[float, KRuDualFunction]:
    """``||m||_KRu`` together with the dual function of :func:`kru_dual_function`, from one transport solve."""
    m = canonicalize(m)
    space = m.space
    if m.size == 0:
        return 0.0, KRuDualFunction(space, np.zeros((0, space.dimension)), np.zeros(0), 0.0)
    res, c = kru_transport(m)
    t = float(np.sign(c))
    return abs(c) + res.cost, KRuDualFunction(space, res.sinks.locations, res.sink_potentials, t)


def kru_dual_function(m: DiscreteMeasure) -> KRuDualFunction:
    """A 1-Lipschitz ``h`` with ``|h(e)| <= 1`` and ``sum_i h(theta_i) w_i = ||m||_KRu``.

    ``h = f - f(e) + sign(m(Z))`` with ``f`` the c-transform of the sink potentials.
    It is therefore a subgradient of the KRu norm at ``m``, valid at every point.
    """
    return kru_value_and_dual(m)[1]


def kru_subgradient(m: DiscreteMeasure, at=None) -> np.ndarray:
    """Supporting functional of the KRu norm at ``m``, evaluated at its atoms (or at ``at``)."""
    m = canonicalize(m)
    if m.size == 0 and at is None:
        return np.zeros(0)
    h = kru_dual_function(m)
    return h(m.locations if at is None else at)
