import math

import numpy as np
import pytest

from rlflab import commutator as cm
from rlflab import continuity as ce
from rlflab import derivation as dv
from rlflab import fields as F
from rlflab import lagrangian as lg
from rlflab import superposition as sup
from rlflab.parallel import set_threads
from rlflab.space import torus_space


@pytest.fixture(scope="module")
def shear32():
    s = torus_space(32, 2)
    b = dv.from_field(s, F.shear_field())
    path = ce.solve(ce.EvolutionProblem(s, b, cm.smooth_density(s, 0), 1.0, 0.05))
    return s, b, path


def _path(space, fld, T=1.0, dt=0.05):
    b = dv.from_field(space, fld)
    return b, ce.solve(ce.EvolutionProblem(space, b, cm.smooth_density(space, 3), T, dt))


def test_zero_field_paths_constant(torus64):
    b, path = _path(torus64, F.zero_field(1))
    ens = sup.lift_solution(torus64, path, b, 0.01, 5000, seed=1)
    assert np.all(ens.paths == ens.paths[0])
    rows = sup.marginal_consistency(ens, path, [0.0, 0.5, 1.0], torus64)
    assert len({r["w1"] for r in rows}) == 1 and len({r["dual_gap"] for r in rows}) == 1
    assert sup.metric_speed_check(ens, space=torus64)["max_abs_deviation"] == 0.0
    assert sup.no_splitting_diagnostic(ens, 1.0, 16, 4)["concentration"] == 1.0


def test_constant_field_marginal_is_translate(torus64):
    N = 20000
    b, path = _path(torus64, F.constant_field([1.0]))
    ens = sup.lift_solution(torus64, path, b, 0.002, N, seed=2)
    u0 = path.densities[0]
    shifted = lg.trig_interpolate(torus64, u0, torus64.points[:, 0] - 1.0)
    w1 = sup.circle_w1(ens.positions(ens.index(1.0))[:, 0], torus64, shifted)
    assert w1 <= 5 / math.sqrt(N)


def test_constant_field_speed_is_exact(torus64):
    b, path = _path(torus64, F.constant_field([0.7]))
    ens = sup.lift_solution(torus64, path, b, 0.002, 2000, seed=0)
    out = sup.metric_speed_check(ens, space=torus64, metric="euclidean")
    assert out["max_abs_deviation"] <= 1e-8


def test_marginal_error_shrinks_under_refinement(shear32):
    s, b, path = shear32
    means = []
    for eps, N in ((0.04, 2000), (0.02, 8000), (0.01, 32000)):
        gaps = [max(r["dual_gap"] for r in sup.marginal_consistency(
            sup.lift_solution(s, path, b, eps, N, seed), path, [0.5, 1.0], s)) for seed in range(3)]
        means.append(np.mean(gaps))
    assert means[0] > means[1] > means[2]


def test_direct_resampling_gap_is_sampling_error(shear32):
    s, _, path = shear32
    for N in (4000, 64000):
        x = sup.sample_density(s, path.densities[-1], N, seed=5)
        assert sup.dictionary_gap(s, x, path.densities[-1]) <= 5 / math.sqrt(N)


def test_shear_metric_speed_first_order(shear32):
    s, b, path = shear32
    devs = [sup.metric_speed_check(sup.lift_solution(s, path, b, 0.002, 2000, 0, dt=dt), space=s)
            ["mean_abs_deviation"] for dt in (0.05, 0.025)]
    assert 1.7 <= devs[0] / devs[1] <= 2.3


def test_no_splitting_ladder_for_shear(shear32):
    s, b, path = shear32
    ens = sup.lift_solution(s, path, b, 0.002, 20000, seed=4)
    conc = [sup.no_splitting_diagnostic(ens, 1.0, B, 2)["concentration"] for B in (16, 32, 64)]
    assert conc[0] <= conc[1] <= conc[2] and conc[2] >= 0.95


def test_sqrt_split_population_concentration():
    fm = lg.sqrt_example_flow(lg.SelectionRule("randomized", seed=9), 4.0, 0.05, 100000)
    ens = sup.ensemble_from_flowmap(fm)
    r = sup.no_splitting_diagnostic(ens, 4.0, 64, 256, domain=(-4.0, 4.0))
    assert 0.5 <= r["concentration"] <= 0.75
    assert r["empty_bins"] == 32  # initial data live on the negative half only
    with pytest.raises(ValueError):
        sup.no_splitting_diagnostic(ens, 4.0, 64, 256)


def test_sampling_rejects_bad_density(torus64):
    with pytest.raises(ValueError):
        sup.sample_density(torus64, -np.ones(64), 1000, 0)
    with pytest.raises(ValueError):
        sup.sample_density(torus64, 2 * np.ones(64), 1000, 0)


def test_lift_needs_enough_paths(torus64):
    b, path = _path(torus64, F.zero_field(1), T=0.1)
    with pytest.raises(ValueError):
        sup.lift_solution(torus64, path, b, 0.01, 100, 0)


def test_lift_independent_of_threads(shear32):
    s, b, path = shear32
    try:
        set_threads(1)
        a = sup.lift_solution(s, path, b, 0.01, 9000, seed=7).paths
        set_threads(4)
        c = sup.lift_solution(s, path, b, 0.01, 9000, seed=7).paths
    finally:
        set_threads(1)
    assert np.array_equal(a, c)


def test_circle_w1_of_exact_quantiles(torus64):
    u = np.ones(64)
    x = (np.arange(100000) + 0.5) / 100000 * 2 * np.pi
    assert sup.circle_w1(x, torus64, u) <= 1e-4
