"""Heat-semigroup commutator ``C^α(c, v) = div((P_α v) c) - P_α div(v c)``.

For divergence-free ``c`` the commutator has the integral representation

    ⟨C^α(c, v), w⟩ = 2 ∫_0^α D^sym c(P_s v, P_{α-s} w) ds

with the deformation pairing of :func:`rlflab.derivation.dsym_pairing`.
The constant 2 was fixed against a brute-force operator-algebra check on
a four-state graph (see :func:`calibrate_representation_factor`).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import derivation as dv
from .space import graph_space, generate_weights

REPRESENTATION_FACTOR = 2.0
DIV_FREE_TOL = 1e-9


def commutator(space, c, v, alpha, t=0.0):
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    v = space.check(v)
    first = dv.divergence_of_product(space, c, space.heat(v, alpha), t)
    second = space.heat(dv.divergence_of_product(space, c, v, t), alpha)
    return first - second


def duality_pairings(space, c, v, alpha, tests=None, t=0.0):
    """``(⟨C^α, w⟩, ⟨div((P_α v) c), w⟩ - ⟨div(v c), P_α w⟩)`` for each test ``w``."""
    W = space.dictionary if tests is None else tests
    C = commutator(space, c, v, alpha, t)
    lhs = W @ (C * space.measure)
    a = dv.divergence_of_product(space, c, space.heat(v, alpha), t)
    b = dv.divergence_of_product(space, c, v, t)
    rhs = W @ (a * space.measure) - space.heat(W, alpha) @ (b * space.measure)
    return lhs, rhs


def _dsym_batch(space, c, f, G, div, t):
    """``D^sym c(f, g)`` for one ``f`` against a batch ``G``."""
    cf = dv.apply(space, c, f, t)
    cG = dv.apply(space, c, G, t)
    lf = space.laplacian(f)
    lG = space.laplacian(G)
    gam = space.gamma(f, G)
    return -0.5 * ((cf * lG + cG * lf - div * gam) @ space.measure)


def representation_integral(space, c, v, alpha, tests=None, order=32, t=0.0):
    """``∫_0^α D^sym c(P_s v, P_{α-s} w) ds`` by Gauss-Legendre quadrature, per test."""
    W = space.dictionary if tests is None else np.atleast_2d(tests)
    x, wq = np.polynomial.legendre.leggauss(order)
    s_nodes = 0.5 * alpha * (x + 1.0)
    wq = 0.5 * alpha * wq
    div = dv.divergence(space, c, t)
    total = np.zeros(len(W))
    for s, q in zip(s_nodes, wq):
        total += q * _dsym_batch(space, c, space.heat(v, s), space.heat(W, alpha - s), div, t)
    return total


def _check_div_free(space, c, t):
    div = dv.divergence(space, c, t)
    nd = float(np.max(np.abs(div), initial=0.0))
    if nd > DIV_FREE_TOL:
        raise ValueError(f"field is not divergence free: max|div c| = {nd:.3e}")


def representation_residual(space, c, v, alpha, quadrature_order=32, tests=None, t=0.0):
    """``max_w |⟨C^α, w⟩ - 2 ∫ D^sym c(P_s v, P_{α-s} w) ds|`` over the dictionary."""
    if quadrature_order < 8:
        raise ValueError("quadrature order must be at least 8")
    _check_div_free(space, c, t)
    W = space.dictionary if tests is None else np.atleast_2d(tests)
    lhs = W @ (commutator(space, c, v, alpha, t) * space.measure)
    rhs = REPRESENTATION_FACTOR * representation_integral(space, c, v, alpha, W, quadrature_order, t)
    return float(np.max(np.abs(lhs - rhs)))


def calibrate_representation_factor(space, c, v, alpha, tests=None, order=64):
    """Ratio ``⟨C^α, w⟩ / ∫ D^sym`` for the test with the largest integral."""
    _check_div_free(space, c, 0.0)
    W = space.dictionary if tests is None else np.atleast_2d(tests)
    lhs = W @ (commutator(space, c, v, alpha) * space.measure)
    integ = representation_integral(space, c, v, alpha, W, order)
    k = int(np.argmax(np.abs(integ)))
    return float(lhs[k] / integ[k])


# -------------------------------------------------------------- instances
def random_graph_instance(n, seed, spectral_radius=20.0, density=0.3, field_scale=1.0):
    """Random connected graph with random measure, divergence-free flow and density.

    Weights are rescaled so the generator's spectrum lies in ``[-spectral_radius, 0]``.
    """
    rng = np.random.default_rng(seed)
    W = generate_weights("random", n, seed=int(rng.integers(2**31)), density=density)
    m = rng.uniform(0.5, 1.5, size=n)
    probe = graph_space(W, m, dictionary_size=2)
    W = W * (spectral_radius / abs(probe.eigenvalues.min()))
    space = graph_space(W, m, seed=int(rng.integers(2**31)))
    c = dv.random_divergence_free_flow(space, rng, scale=field_scale * float(W[W > 0].mean()))
    v = rng.uniform(0.2, 2.0, size=n)
    return space, c, v


# ----------------------------------------------------------------- reports
def _norm(space, f, p):
    return float(space.lp_norm(f, p))


def _fit_slope(alphas, values):
    a = np.asarray(alphas, float)
    y = np.asarray(values, float)
    ok = y > 0
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(a[ok]), np.log(y[ok]), 1)[0])


@dataclass
class CommutatorReport:
    alphas: list
    norm_43: list
    norm_1: list
    residual: list
    ratio: list
    pairing_gap: list
    dsym_estimate: float
    div_l2: float
    bound_constant: float
    slope: float | None
    anomaly: bool = False
    extra: dict = field(default_factory=dict)

    def rows(self):
        return [{"alpha": a, "norm_43": n43, "norm_1": n1, "residual": r, "ratio": q}
                for a, n43, n1, r, q in zip(self.alphas, self.norm_43, self.norm_1,
                                             self.residual, self.ratio)]


def _strictly_decreasing(alphas):
    return all(a > b for a, b in zip(alphas, alphas[1:]))


def bound_check(space, c, v_samples, alpha_list, trials=8, seed=0, quadrature_order=32):
    """Ratios ``‖C^α‖_{4/3} / (‖v‖_4 [‖D^sym c‖_2 + ‖div c‖_2])`` over ``α`` and samples.

    ``‖D^sym c‖_2`` is the dictionary lower bound, so ratios are upper
    estimates of the true constant.
    """
    alphas = [float(a) for a in alpha_list]
    if not _strictly_decreasing(alphas) or not all(0 < a < 1 for a in alphas):
        raise ValueError("alpha_list must be strictly decreasing inside (0, 1)")
    V = np.atleast_2d(v_samples)
    rep = dv.dsym_norm_estimate(space, c, trials=trials, seed=seed)
    div = dv.divergence(space, c)
    div_free = float(np.max(np.abs(div), initial=0.0)) <= DIV_FREE_TOL
    denom_c = rep.estimate + rep.divergence_l2
    n43s, n1s, res, ratios, gaps = [], [], [], [], []
    anomaly = False
    for a in alphas:
        worst43 = worst1 = worst_ratio = worst_gap = 0.0
        for v in V:
            C = commutator(space, c, v, a)
            n43, n1 = _norm(space, C, 4 / 3), _norm(space, C, 1)
            denom = _norm(space, v, 4) * denom_c
            if denom < 1e-12:
                anomaly |= n43 > 1e-12
                ratio = 0.0
            else:
                ratio = n43 / denom
            lhs, rhs = duality_pairings(space, c, v, a)
            worst43, worst1 = max(worst43, n43), max(worst1, n1)
            worst_ratio = max(worst_ratio, ratio)
            worst_gap = max(worst_gap, float(np.max(np.abs(lhs - rhs))))
        n43s.append(worst43)
        n1s.append(worst1)
        ratios.append(worst_ratio)
        gaps.append(worst_gap)
        res.append(max(representation_residual(space, c, v, a, quadrature_order) for v in V)
                   if div_free else float("nan"))
    return CommutatorReport(alphas, n43s, n1s, res, ratios, gaps, rep.estimate, rep.divergence_l2,
                            float(max(ratios)), _fit_slope(alphas, n1s), anomaly)


def decay_scan(space, c, v, alpha_list):
    """``‖C^α‖_1`` against ``α`` and the fitted log-log slope (positive means decay)."""
    alphas = [float(a) for a in alpha_list]
    if len(alphas) < 4 or not _strictly_decreasing(alphas):
        raise ValueError("decay scan needs at least 4 strictly decreasing alphas")
    norms = [_norm(space, commutator(space, c, v, a), 1) for a in alphas]
    slope = _fit_slope(alphas, norms)
    if all(n == 0 for n in norms):
        slope = 0.0
    return {"alphas": alphas, "norm_1": norms, "slope": slope}


def dyadic_alphas(k_max=8):
    return [2.0 ** -k for k in range(1, k_max + 1)]


def smooth_density(space, seed=0):
    """Smooth positive probability density: ``exp(½ Σ_i cos(x_i + φ_i))`` on the torus,
    a random positive vector on graphs."""
    rng = np.random.default_rng(seed)
    if space.kind == "graph":
        u = rng.uniform(0.5, 1.5, size=space.n)
    else:
        phase = rng.uniform(0, 2 * np.pi, size=space.d)
        k = 2 * np.pi / space.L
        u = np.exp(0.5 * np.cos(k * space.points + phase).sum(axis=1))
    return u / space.integrate(u)
