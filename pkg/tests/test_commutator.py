import math

import numpy as np
import pytest
from scipy.linalg import expm

from rlflab import commutator as cm
from rlflab import derivation as dv
from rlflab import fields as F
from rlflab.space import torus_space


def _product_matrix(space, c):
    """Dense matrix of ``u -> div(u c)`` assembled column by column."""
    return np.stack([dv.divergence_of_product(space, c, e) for e in np.eye(space.n)], axis=1)


@pytest.fixture(scope="module")
def instance8():
    return cm.random_graph_instance(8, seed=11)


def test_commutator_matches_dense_operator_algebra(instance8):
    s, c, v = instance8
    T = _product_matrix(s, c)
    H = expm(0.5 * s.laplacian_matrix())
    brute = T @ (H @ v) - H @ (T @ v)
    assert np.max(np.abs(cm.commutator(s, c, v, 0.5) - brute)) <= 1e-11


def test_commutator_trivial_cases(instance8, torus2d):
    s, c, v = instance8
    assert np.max(np.abs(cm.commutator(s, c, np.ones(s.n), 0.3))) <= 1e-10
    z = dv.zero_derivation(s)
    assert np.all(cm.commutator(s, z, v, 0.3) == 0)
    with pytest.raises(ValueError):
        cm.commutator(s, c, v, 0.0)


def test_deformation_equals_matrix_commutator(instance8, rng):
    # second route: 2 D^sym c(f, g) = <(T L - L T) f, g>_m for divergence-free c
    s, c, _ = instance8
    T, L = _product_matrix(s, c), s.laplacian_matrix()
    f, g = rng.normal(size=(2, s.n))
    lhs = 2 * dv.dsym_pairing(s, c, f, g)
    rhs = s.inner((T @ L - L @ T) @ f, g)
    assert abs(lhs - rhs) <= 1e-10 * (1 + abs(rhs))


def test_representation_factor_calibration(instance8):
    s, c, v = instance8
    assert cm.calibrate_representation_factor(s, c, v, 0.5) == pytest.approx(2.0, abs=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_representation_residual_and_order_consistency(seed):
    s, c, v = cm.random_graph_instance(8 + 8 * seed, seed)
    r32 = cm.representation_residual(s, c, v, 0.5, 32)
    r64 = cm.representation_residual(s, c, v, 0.5, 64)
    assert r32 <= 1e-8 and abs(r32 - r64) <= 1e-8


def test_representation_zero_field(instance8):
    s, _, v = instance8
    assert cm.representation_residual(s, dv.zero_derivation(s), v, 0.5) == 0.0


def test_representation_rejects_divergence(instance8, rng):
    s, _, v = instance8
    C = np.triu(rng.normal(size=s.weights.shape), 1) * s.weights
    with pytest.raises(ValueError, match="divergence"):
        cm.representation_residual(s, dv.GraphDerivation(C - C.T), v, 0.5)


def test_representation_torus_rotation():
    s = torus_space(32, 2)
    b = dv.from_field(s, F.rotation_field())
    assert cm.representation_residual(s, b, cm.smooth_density(s, 1), 0.25) <= 1e-6


def test_duality_pairings_agree(instance8):
    s, c, v = instance8
    lhs, rhs = cm.duality_pairings(s, c, v, 0.25)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


# ------------------------------------------------------------ bound checks
def test_bound_check_zero_field(torus64):
    rep = cm.bound_check(torus64, dv.zero_derivation(torus64), [cm.smooth_density(torus64)],
                         cm.dyadic_alphas(4))
    assert rep.ratio == [0.0] * 4 and not rep.anomaly


def test_bound_check_norms_match_direct_evaluation(torus64):
    b = dv.from_field(torus64, F.compressive_field())
    v = cm.smooth_density(torus64, 2)
    rep = cm.bound_check(torus64, b, [v], [0.5, 0.25])
    C = cm.commutator(torus64, b, v, 0.25)
    direct = (np.sum(np.abs(C) ** (4 / 3)) / torus64.n) ** 0.75
    assert rep.norm_43[1] == pytest.approx(direct, rel=1e-12)


def test_bound_check_gradient_field_stable_under_refinement():
    ratios = []
    for N in (16, 32):
        s = torus_space(N, 2)
        x, y = s.points.T
        V = F.TrigSeries(((1.0, (1, 0), "cos"), (0.5, (1, 1), "sin")))
        b = dv.from_field(s, F.gradient_field(V, 2))
        rep = cm.bound_check(s, b, [cm.smooth_density(s, 0)], cm.dyadic_alphas(8), trials=4)
        ratios.append(rep.bound_constant)
    assert all(math.isfinite(r) for r in ratios)
    assert abs(ratios[0] - ratios[1]) <= 0.1 * ratios[1]


def test_bound_check_rejects_unordered_alphas(torus64):
    with pytest.raises(ValueError):
        cm.bound_check(torus64, dv.zero_derivation(torus64), [np.ones(64)], [0.25, 0.5])


def test_translation_commutes_with_heat(torus64):
    b = dv.from_field(torus64, F.constant_field([1.0]))
    rep = cm.bound_check(torus64, b, [cm.smooth_density(torus64)], [0.5, 0.25])
    assert not rep.anomaly and max(rep.norm_43) <= 1e-12


def test_bound_check_flags_anomaly(torus64, monkeypatch):
    # a vanishing deformation estimate with a nonzero commutator must be flagged
    real = dv.dsym_norm_estimate

    def fake(*args, **kw):
        rep = real(*args, **kw)
        rep.estimate, rep.divergence_l2 = 0.0, 0.0
        return rep

    monkeypatch.setattr(cm.dv, "dsym_norm_estimate", fake)
    b = dv.from_field(torus64, F.compressive_field())
    rep = cm.bound_check(torus64, b, [cm.smooth_density(torus64)], [0.5, 0.25])
    assert rep.anomaly and rep.ratio == [0.0, 0.0]


# -------------------------------------------------------------- decay scans
def test_decay_scan_zero_field(torus64):
    out = cm.decay_scan(torus64, dv.zero_derivation(torus64), np.ones(64), cm.dyadic_alphas(5))
    assert out["norm_1"] == [0.0] * 5 and out["slope"] == 0.0


def test_decay_scan_smooth_versus_rough():
    s = torus_space(32, 2)
    v = cm.smooth_density(s, 0)
    alphas = cm.dyadic_alphas(8)
    smooth = cm.decay_scan(s, dv.from_field(s, F.shear_field()), v, alphas)
    rough = cm.decay_scan(s, dv.from_field(s, F.checkerboard_field(8)), v, alphas)
    assert smooth["slope"] > 0
    assert smooth["slope"] - rough["slope"] >= 0.5


def test_decay_scan_needs_four_alphas(torus64):
    with pytest.raises(ValueError):
        cm.decay_scan(torus64, dv.zero_derivation(torus64), np.ones(64), [0.5, 0.25])
