import math

import numpy as np
import pytest

from rlflab import continuity as ce
from rlflab import derivation as dv
from rlflab import fields as F
from rlflab import lagrangian as lg
from rlflab import stochastic as st
from rlflab.parallel import set_threads
from rlflab.space import torus_space


def smooth_density(space):
    x = space.points[:, 0]
    u = np.exp(0.5 * np.cos(x - 0.3))
    return u / space.integrate(u)


@pytest.fixture(scope="module")
def circle():
    return torus_space(64, 1)


@pytest.fixture(scope="module")
def u0(circle):
    return smooth_density(circle)


def cosine_coefficient(amp=0.2):
    return F.TrigSeries(((amp, (1,), "cos"),), const=1.0)


# ------------------------------------------------------------ operator
def test_negative_coefficient_rejected_with_location(circle):
    with pytest.raises(ValueError, match="negative at state"):
        st.kolmogorov_operator(circle, F.zero_field(1), F.TrigSeries(((2.0, (1,), "cos"),), const=1.0))


def test_generator_adds_half_a_laplacian(circle):
    op = st.kolmogorov_operator(circle, F.compressive_field(amplitude=0.5), cosine_coefficient())
    x = circle.points[:, 0]
    f = np.sin(2 * x)
    b = dv.from_field(circle, F.compressive_field(amplitude=0.5))
    expected = dv.apply(circle, b, f) + 0.5 * (1 + 0.2 * np.cos(x)) * (-4 * f)
    assert np.max(np.abs(op.apply(f) - expected)) < 1e-11


def test_leibniz_defect_matches_half_a_gamma(circle):
    op = st.kolmogorov_operator(circle, F.compressive_field(amplitude=0.5), cosine_coefficient())
    x = circle.points[:, 0]
    assert op.leibniz_defect(np.sin(x) + 0.3 * np.cos(2 * x), np.cos(x)) < 1e-12


def test_regularity_report_flags_proxy(circle):
    op = st.kolmogorov_operator(circle, F.zero_field(1), cosine_coefficient())
    rep = st.diffusion_regularity_report(op)
    # a = 1 + 0.2 cos x:  ‖a‖² = 1 + 0.02,  ‖a'‖² = 0.02
    assert rep["a_l2"] == pytest.approx(math.sqrt(1.02), rel=1e-12)
    assert rep["sqrt_gamma_a_l2"] == pytest.approx(math.sqrt(0.02), rel=1e-12)
    assert rep["hessian_proxy"] > 0
    assert "proxy" in rep["hessian_kind"]


# ------------------------------------------------------------ Fokker-Planck
def test_brownian_fp_is_heat_at_half_time(circle, u0):
    op = st.kolmogorov_operator(circle, F.zero_field(1), 1.0)
    path = st.fokker_planck_solve(op, u0, 1.0, 0.01)
    assert np.max(np.abs(path.densities[-1] - circle.heat(u0, 0.5))) < 1e-5
    assert np.max(np.abs(path.masses() - 1)) < 1e-12
    assert np.max(path.residuals) < path.info["tol_step"]


def test_degenerate_fp_is_bit_identical_to_continuity(circle, u0):
    fld = F.compressive_field(amplitude=0.5)
    fp = st.fokker_planck_solve(st.kolmogorov_operator(circle, fld, 0.0), u0, 1.0, 0.02)
    cs = ce.solve(ce.EvolutionProblem(circle, dv.from_field(circle, fld), u0, 1.0, 0.02))
    assert np.array_equal(fp.densities, cs.densities)


def test_shear_fp_is_second_order_in_time():
    s = torus_space(16, 2)
    x, y = s.points[:, 0], s.points[:, 1]
    u = np.exp(0.4 * np.cos(x) + 0.3 * np.sin(y))
    u /= s.integrate(u)
    op = st.kolmogorov_operator(s, F.shear_field(), 0.2)
    ends = [st.fokker_planck_solve(op, u, 0.8, h).densities[-1] for h in (0.1, 0.05, 0.025)]
    e1 = s.lp_norm(ends[0] - ends[1], 2)
    e2 = s.lp_norm(ends[1] - ends[2], 2)
    assert e1 / e2 == pytest.approx(4.0, rel=0.15)


# ------------------------------------------------------------ energy
def test_energy_check_rejects_degenerate(circle, u0):
    op = st.kolmogorov_operator(circle, F.compressive_field(), 0.0)
    with pytest.raises(ValueError, match="min a > 0"):
        st.energy_uniqueness_check(op, u0, 1.0, 0.1)
    with pytest.raises(ValueError):
        st.gronwall_rate(op)


def test_identical_discretisations_agree_exactly(circle, u0):
    op = st.kolmogorov_operator(circle, F.compressive_field(amplitude=0.5), cosine_coefficient())
    a = st.fokker_planck_solve(op, u0, 1.0, 0.05).densities[-1]
    b = st.fokker_planck_solve(op, u0, 1.0, 0.05).densities[-1]
    assert circle.lp_norm(a - b, 2) == 0.0


def test_energy_ladder_ratio_and_perturbation_bound(circle, u0):
    op = st.kolmogorov_operator(circle, F.compressive_field(amplitude=0.5), cosine_coefficient())
    x = circle.points[:, 0]
    out = st.energy_uniqueness_check(op, u0, 1.0, 0.1, rungs=3, perturbation=np.sin(x), delta=0.01)
    for r in out["ratios"]:
        assert r == pytest.approx(4.0, rel=0.3)
    assert out["lambda"] == pytest.approx(0.8)
    assert 0 < out["perturbed_gap"] <= out["perturbed_bound"]


def test_gronwall_rate_closed_form(circle):
    # b = 0.5 sin x, a = 1 + 0.2 cos x:  (0.5 + 0.1)² / 0.8
    op = st.kolmogorov_operator(circle, F.compressive_field(amplitude=0.5), cosine_coefficient())
    assert st.gronwall_rate(op) == pytest.approx(0.36 / 0.8, rel=1e-3)


# ------------------------------------------------------------ SDE
def test_sde_rejects_small_ensembles_and_graphs(circle, u0, random_graph):
    op = st.kolmogorov_operator(circle, F.zero_field(1), 1.0)
    with pytest.raises(ValueError, match="at least 1000"):
        st.sde_sample(op, u0, 100, 0.01, 0.1, 0)
    gop = st.KolmogorovOperator(random_graph, dv.graph_flow(random_graph, np.zeros((12, 12))),
                                F.TrigSeries(const=1.0))
    with pytest.raises(ValueError, match="torus"):
        st.sde_sample(gop, np.ones(12), 1000, 0.01, 0.1, 0)


def test_sde_negative_coefficient_aborts_with_position(circle, u0):
    op = st.kolmogorov_operator(circle, F.zero_field(1), 1.0)
    # bypass the grid check to exercise the per-particle one
    op.a = F.TrigSeries(((2.0, (1,), "cos"),), const=1.0)
    with pytest.raises(ValueError, match="negative at x ="):
        st.sde_sample(op, u0, 1000, 0.01, 0.1, 0)


def test_zero_drift_zero_diffusion_paths_are_constant(circle, u0):
    op = st.kolmogorov_operator(circle, F.zero_field(1), 0.0)
    ens = st.sde_sample(op, u0, 1000, 0.1, 1.0, 3)
    assert np.array_equal(ens.paths[-1], ens.paths[0])
    assert np.max(np.abs(ens.martingales)) == 0.0


def test_brownian_variance_within_three_standard_errors(circle, u0):
    op = st.kolmogorov_operator(circle, F.zero_field(1), 1.0)
    N = 20000
    ens = st.sde_sample(op, u0, N, 0.01, 1.0, 5, save_every=50)
    for k, t in enumerate(ens.times):
        if t == 0:
            continue
        var = np.var(ens.paths[k, :, 0] - ens.paths[0, :, 0])
        assert abs(var - t) <= 3 * math.sqrt(2 / N) * t


def test_degenerate_sde_converges_to_flow_first_order(circle, u0):
    fld = F.compressive_field(amplitude=0.5)
    op = st.kolmogorov_operator(circle, fld, 0.0)
    errs = []
    for dt in (0.02, 0.01):
        ens = st.sde_sample(op, u0, 1000, dt, 1.0, 7, save_every=int(round(1 / dt)))
        ref = lg.integrate_flow(fld, 1.0, 0.001, ens.paths[0], jacobian=False)
        errs.append(np.max(np.abs(ens.paths[-1] - ref.X[-1])))
    assert errs[1] < 0.02
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.2)


def test_sde_is_thread_independent(circle, u0):
    op = st.kolmogorov_operator(circle, F.compressive_field(amplitude=0.5), cosine_coefficient())
    try:
        set_threads(1)
        a = st.sde_sample(op, u0, 5000, 0.05, 0.5, 11)
        set_threads(4)
        b = st.sde_sample(op, u0, 5000, 0.05, 0.5, 11)
    finally:
        set_threads(1)
    assert np.array_equal(a.paths, b.paths)
    assert np.array_equal(a.martingales, b.martingales)


# ------------------------------------------------------------ martingale test
def test_degenerate_martingale_defect_is_quadrature_error(circle, u0):
    op = st.kolmogorov_operator(circle, F.compressive_field(amplitude=0.5), 0.0)
    ens = st.sde_sample(op, u0, 1000, 0.01, 1.0, 2, save_every=10)
    md = st.martingale_defect(ens, [0.2, 0.5], [0.5, 1.0], bins=8)
    # Euler positions with trapezoid integrals: O(dt) per unit time
    assert md["summary"]["defect"] < 0.01
    assert np.max(np.abs(ens.quad_var)) == 0.0


def test_brownian_martingale_defect_and_quadratic_variation(circle, u0):
    op = st.kolmogorov_operator(circle, F.zero_field(1), 1.0)
    ens = st.sde_sample(op, u0, 20000, 0.01, 1.0, 4, save_every=10)
    md = st.martingale_defect(ens, [0.2, 0.5], [0.5, 1.0], bins=8)
    sm = md["summary"]
    assert sm["defect"] <= 3 * sm["stderr"]
    assert sm["low_power_bins"] == 0
    for row in md["quadratic_variation"]:
        # Var(M_t - M_s) = E ∫_s^t aΓ(f), up to sampling error
        assert row["var_increment"] == pytest.approx(row["mean_qv"], rel=0.1)


def test_sparse_bins_are_flagged_low_power(circle, u0):
    op = st.kolmogorov_operator(circle, F.zero_field(1), 1.0)
    ens = st.sde_sample(op, u0, 1000, 0.05, 1.0, 4)
    md = st.martingale_defect(ens, [0.5], [1.0], bins=64)
    assert md["summary"]["low_power_bins"] > 0
    assert all(r["low_power"] == (r["count"] < 30) for r in md["rows"])


def test_martingale_defect_rejects_off_grid_times(circle, u0):
    op = st.kolmogorov_operator(circle, F.zero_field(1), 1.0)
    ens = st.sde_sample(op, u0, 1000, 0.1, 1.0, 4)
    with pytest.raises(ValueError, match="checkpoint"):
        st.martingale_defect(ens, [0.25], [1.0], bins=4)


# ------------------------------------------------------------ FP vs particles
def test_static_ensemble_gap_is_pure_sampling_error(circle, u0):
    from rlflab.superposition import dictionary_gap

    op = st.kolmogorov_operator(circle, F.zero_field(1), 0.0)
    fp = st.fokker_planck_solve(op, u0, 1.0, 0.1)
    ens = st.sde_sample(op, u0, 4000, 0.1, 1.0, 9)
    rows = st.fp_empirical_consistency(ens, fp, [0.5, 1.0], circle)
    base = dictionary_gap(circle, ens.positions(0), u0)
    for r in rows:
        assert r["dual_gap"] == pytest.approx(base, rel=1e-9)


def test_brownian_empirical_gap_within_sampling_allowance(circle, u0):
    op = st.kolmogorov_operator(circle, F.zero_field(1), 1.0)
    dt = 0.01
    fp = st.fokker_planck_solve(op, u0, 1.0, dt)
    N = 20000
    ens = st.sde_sample(op, u0, N, dt, 1.0, 6, save_every=50)
    for r in st.fp_empirical_consistency(ens, fp, [0.5, 1.0], circle):
        assert r["dual_gap"] <= 5 / math.sqrt(N) + dt


def test_shear_gap_halves_when_ensemble_quadruples():
    s = torus_space(16, 2)
    x, y = s.points[:, 0], s.points[:, 1]
    u = np.exp(0.4 * np.cos(x) + 0.3 * np.sin(y))
    u /= s.integrate(u)
    op = st.kolmogorov_operator(s, F.shear_field(), 0.2)
    fp = st.fokker_planck_solve(op, u, 0.5, 0.01)
    means = []
    for N in (2000, 8000):
        gaps = [st.fp_empirical_consistency(st.sde_sample(op, u, N, 0.01, 0.5, seed, save_every=50),
                                            fp, [0.5], s)[0]["dual_gap"] for seed in range(6)]
        means.append(np.mean(gaps))
    assert means[0] / means[1] == pytest.approx(2.0, rel=0.35)


def test_checkpoint_must_lie_on_fp_grid(circle, u0):
    op = st.kolmogorov_operator(circle, F.zero_field(1), 1.0)
    fp = st.fokker_planck_solve(op, u0, 1.0, 0.25)
    ens = st.sde_sample(op, u0, 1000, 0.1, 1.0, 1)
    with pytest.raises(ValueError, match="Fokker-Planck grid"):
        st.fp_empirical_consistency(ens, fp, [0.5 + 0.1], circle)
