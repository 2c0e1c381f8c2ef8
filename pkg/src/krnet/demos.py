"""Numerical reproductions of the pathological examples.

Every demo computes its quantities with the library's own norms and objective,
checks them against the closed-form values, and raises
:class:`~krnet.errors.DemoCheckFailed` on any mismatch.  The returned report is
a JSON-ready dict.
"""
from __future__ import annotations

import numpy as np

from .errors import DemoCheckFailed
from .measure import DiscreteMeasure, PointedSpace, dipole, dirac, measure, rescale_pushforward
from .network import Activation, Dataset, realize_lifted
from .problem import Problem, objective, penalty
from .regularizer import RegParams
from .transport import kr_norm, kru_norm


def _check(ok: bool, what: str) -> None:
    if not ok:
        raise DemoCheckFailed(what)


def mass_escape_problem(dataset: Dataset | None = None) -> Problem:
    """``|f_mu - 1|^2 + G_{1/2,1/2}(mu)`` with ``p = 1`` over measures on the real line.

    With a single input ``x = ()`` lifted to ``(1,)`` and the relu feature, the
    network output is ``int max(z, 0) dmu(z)``, which agrees with the pairing
    against ``d(z, 0) = |z|`` on measures supported in ``z > 0``.
    """
    data = dataset if dataset is not None else Dataset(np.zeros((1, 0)), [1.0])
    return Problem(data, Activation("relu"), "squared", RegParams(alpha=0.5, beta=0.5, p=1.0))


def _random_measure(rng: np.random.Generator, space: PointedSpace) -> DiscreteMeasure:
    k = int(rng.integers(1, 6))
    locs = rng.normal(scale=3.0, size=(k, space.dimension))
    w = rng.normal(size=k)
    w[np.abs(w) < 1e-3] = 1.0
    return measure(space, locs, w)


def demo_mass_escape(exponents=range(1, 7), n_random: int = 100, seed: int = 0) -> dict:
    """Minimising sequence ``delta_z / (2z)`` escaping to infinity, plus the rescaling inequality."""
    prob = mass_escape_problem()
    space = prob.space
    zs = [10.0 ** k for k in exponents]
    objs, krus, data_terms = [], [], []
    for z in zs:
        mu = dirac(space, [z], 1.0 / (2.0 * z))
        objs.append(objective(mu, prob))
        krus.append(kru_norm(mu))
        data_terms.append(objective(mu, prob) - penalty(mu, prob))
    objs_a = np.array(objs)
    krus_a = np.array(krus)
    exact_obj = 0.75 + 1.0 / (2.0 * np.array(zs))
    exact_kru = 0.5 + 1.0 / (2.0 * np.array(zs))
    _check(np.allclose(objs_a, exact_obj, rtol=0, atol=1e-12), f"objective {objs} != 3/4 + 1/(2z)")
    _check(np.allclose(krus_a, exact_kru, rtol=0, atol=1e-12), f"KRu norm {krus} != 1/2 + 1/(2z)")
    _check(bool(np.all(np.diff(objs_a) < 0)), "objective is not strictly decreasing along z_n")
    _check(abs(objs[-1] - 0.75) <= 1e-4, f"objective {objs[-1]} not within 1e-4 of 3/4")
    _check(abs(krus[-1] - 0.5) <= 1e-5, f"KRu norm {krus[-1]} not within 1e-5 of 1/2")
    _check(np.allclose(data_terms, 0.25, atol=1e-12), "data term is not 1/4")

    # strict decrease of the objective under mass-preserving dilation (relu, p = 1)
    rng = np.random.default_rng(seed)
    data = Dataset(rng.normal(size=(8, 2)), rng.normal(size=8))
    prob2 = mass_escape_problem(data)
    worst_gain = np.inf
    lower_bound_min = np.inf
    for _ in range(n_random):
        mu = _random_measure(rng, prob2.space)
        R = float(rng.uniform(1.5, 10.0))
        muR = rescale_pushforward(mu, R)
        fit = np.max(np.abs(realize_lifted(mu, prob2.activation, prob2.lifted_inputs)
                            - realize_lifted(muR, prob2.activation, prob2.lifted_inputs)))
        _check(fit <= 1e-9 * max(1.0, float(np.abs(mu.weights).sum()) * 10), f"dilation changed outputs by {fit}")
        gain = objective(mu, prob2) - objective(muR, prob2)
        _check(gain > 0, f"dilation by {R} did not lower the objective (gain {gain})")
        worst_gain = min(worst_gain, gain)
        m1 = _random_measure(rng, space)
        lower_bound_min = min(lower_bound_min, objective(m1, prob))
    _check(lower_bound_min >= 0.75 - 1e-12, f"objective {lower_bound_min} fell below the infimum 3/4")
    return {
        "demo": "mass-escape",
        "z": zs,
        "objective": objs,
        "kru_norm": krus,
        "data_term": data_terms,
        "infimum": 0.75,
        "limit_kru_norm": 0.5,
        "rescaling_trials": int(n_random),
        "min_rescaling_gain": float(worst_gain),
        "min_objective_random_measures": float(lower_bound_min),
    }


def oscillating_test_function(t, ratio: int = 3) -> np.ndarray:
    """Lipschitz function (constant 2 for ``ratio = 3``) with ``n_k f(1/n_k) = (-1)^k``, ``n_k = ratio^k``.

    On ``|t|`` in ``[1/n_{k+1}, 1/n_k)`` it interpolates linearly between
    ``(-1)^k / n_k`` and ``(-1)^{k+1} / n_{k+1}``; it vanishes at 0 and equals 1
    for ``|t| >= 1``.
    """
    t = np.abs(np.asarray(t, dtype=float))
    out = np.ones_like(t)
    inner = (t > 0) & (t < 1)
    tt = t[inner]
    k = np.floor(-np.log(tt) / np.log(ratio)).astype(int)
    # guard against roundoff in the logarithm at the breakpoints
    k = np.where(float(ratio) ** (-k) < tt, k - 1, k)
    k = np.where(float(ratio) ** (-(k + 1)) > tt, k + 1, k)
    nk = float(ratio) ** k
    nk1 = nk * ratio
    val = 1.0 / nk - (tt - 1.0 / nk) * (nk1 + nk) / (nk - nk1)
    out[inner] = np.where(k % 2 == 0, 1.0, -1.0) * val
    out[t == 0] = 0.0
    return out


def demo_dipoles(n_max: int = 10_000, n_levels: int = 9) -> dict:
    """``n (delta_{1/n} - delta_0)`` has KR norm 1 for every ``n`` yet does not converge weakly."""
    space = PointedSpace(1)
    norms = np.array([kr_norm(dipole(space, [1.0 / n], [0.0], float(n))) for n in range(1, n_max + 1)])
    _check(bool(np.all(np.abs(norms - 1.0) <= 1e-10)),
           f"KR norm deviates from 1 by {np.max(np.abs(norms - 1.0))}")
    ns = [3 ** k for k in range(n_levels)]
    f = oscillating_test_function
    pairings = [float(n * (f(1.0 / n) - f(0.0))) for n in ns]
    expected = [(-1.0) ** k for k in range(n_levels)]
    _check(np.allclose(pairings, expected, atol=1e-12), f"pairings {pairings} do not alternate")
    # Lipschitz constant of f on a dense grid including every breakpoint
    grid = np.unique(np.concatenate([np.geomspace(1e-6, 2.0, 20001), 1.0 / np.array(ns, float),
                                     [0.0]]))
    vals = f(grid)
    lip = float(np.max(np.abs(np.diff(vals)) / np.diff(grid)))
    _check(lip <= 2.0 + 1e-8, f"test function has slope {lip} > 2")
    return {
        "demo": "dipoles",
        "n_checked": int(n_max),
        "max_abs_kr_deviation": float(np.max(np.abs(norms - 1.0))),
        "subsequence": ns,
        "pairings": pairings,
        "test_function_lipschitz": lip,
    }


def demo_kr_vs_wass(radii=tuple(10.0 ** -k for k in range(1, 9)), exponents=(0.25, 0.5, 0.75)) -> dict:
    """``mu_r = |r|^{-s} (delta_r - delta_0)`` vanishes in KR but not against ``|z|^s``."""
    euclid = PointedSpace(1)
    rows = []
    for s in exponents:
        snow = PointedSpace(1, metric_exponent=s)
        for r in radii:
            w = abs(r) ** (-s)
            kr_e = kr_norm(dipole(euclid, [r], [0.0], w))
            kr_s = kr_norm(dipole(snow, [r], [0.0], w))
            pairing = w * (abs(r) ** s - 0.0)
            _check(abs(kr_e - abs(r) ** (1 - s)) <= 1e-10 * abs(r) ** (1 - s),
                   f"KR norm {kr_e} != |r|^(1-s) at r={r}, s={s}")
            _check(abs(pairing - 1.0) <= 1e-12, f"pairing {pairing} != 1 at r={r}, s={s}")
            _check(abs(kr_s - 1.0) <= 1e-10, f"snowflake KR norm {kr_s} != 1 at r={r}, s={s}")
            rows.append({"s": s, "r": r, "kr_norm_euclidean": kr_e,
                         "kr_norm_snowflake": kr_s, "pairing_abs_z_pow_s": pairing})
    for s in exponents:
        seq = [row["kr_norm_euclidean"] for row in rows if row["s"] == s]
        _check(bool(np.all(np.diff(seq) < 0)), f"KR norm not decreasing as r -> 0 for s={s}")
    return {"demo": "kr-vs-wass", "rows": rows}


DEMOS = {
    "mass-escape": demo_mass_escape,
    "dipoles": demo_dipoles,
    "kr-vs-wass": demo_kr_vs_wass,
}
