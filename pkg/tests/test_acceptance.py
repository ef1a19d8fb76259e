"""Acceptance criteria 1-10, one summary line each.

The suite runs once single-threaded; criterion 10 reruns it concurrently with
four threads and compares metric hashes.
"""
import math
from concurrent.futures import ThreadPoolExecutor

import pytest

from rlflab.config import load_config
from rlflab.scenarios import REGISTRY, run_scenario

BUDGET_S = {1: 10, 2: 30, 3: 60, 4: 120, 5: 120, 6: 30, 7: 180, 8: 120, 9: 300}
SCENARIO_FOR = {REGISTRY[n].criterion: n for n in REGISTRY if REGISTRY[n].criterion}


@pytest.fixture(scope="module")
def records(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance")
    cfg = load_config(overrides={"run": {"threads": 1, "out": str(base)}})
    return {n: run_scenario(n, cfg, str(base / n)) for n in REGISTRY}


def check_map(rec):
    return {c["name"]: c for c in rec["checks"]}


def log_line(log, crit, ok, detail, rec=None):
    timing = ""
    if rec is not None:
        timing = f" wall={rec['wall_time']:.1f}s/{BUDGET_S[crit]}s"
    line = f"criterion {crit:2d} {'PASS' if ok else 'FAIL'} {detail}{timing}"
    log.append(line)
    print(line)


def evaluate(records, crit, headline):
    rec = records[SCENARIO_FOR[crit]]
    cm = check_map(rec)
    failed = [c["name"] for c in rec["checks"] if c["asserted"] and not c["passed"]]
    in_time = rec["wall_time"] < BUDGET_S[crit]
    detail = " ".join(f"{k}={cm[k]['value']:.4g}" for k in headline)
    if failed:
        detail += f" failed={','.join(failed)}"
    return rec, cm, not failed and in_time, detail


def assert_criterion(rec, ok):
    assert rec["passed"], rec["first_failure"]
    assert ok, f"over time budget: {rec['wall_time']:.1f}s"


def test_criterion_1_semigroup_axioms(records, acceptance_log):
    names = [f"{b}.{k}" for b in ("graph", "torus1d", "torus2d")
             for k in ("P1", "max_principle", "contraction", "symmetry", "regularization")]
    rec, cm, ok, _ = evaluate(records, 1, [])
    worst = max(cm[n]["value"] for n in names)
    ok = ok and all(cm[n]["threshold"] <= 1e-10 for n in names)
    log_line(acceptance_log, 1, ok, f"worst_axiom_defect={worst:.3g} tol=1e-10", rec)
    assert_criterion(rec, ok)


def test_criterion_2_gamma_inequality(records, acceptance_log):
    rec, cm, ok, detail = evaluate(records, 2, ["max_c2_estimate"])
    log_line(acceptance_log, 2, ok, f"{detail} bound={1 / math.sqrt(2) + 1e-9:.10f}", rec)
    assert_criterion(rec, ok)


def test_criterion_3_commutator_identity(records, acceptance_log):
    rec, cm, ok, detail = evaluate(records, 3, ["max_residual_order32", "calibrated_factor_error"])
    ok = ok and cm["max_residual_order32"]["threshold"] <= 1e-8
    log_line(acceptance_log, 3, ok, detail, rec)
    assert_criterion(rec, ok)


def test_criterion_4_commutator_estimate(records, acceptance_log):
    rec, cm, ok, detail = evaluate(records, 4, ["max_ratio_finite", "smooth_slope", "slope_gap"])
    log_line(acceptance_log, 4, ok, detail, rec)
    assert_criterion(rec, ok)


def test_criterion_5_continuity(records, acceptance_log):
    rec, cm, ok, _ = evaluate(records, 5, [])
    excess = max(c["value"] for n, c in cm.items() if ".apriori_r" in n)
    mass = max(c["value"] for n, c in cm.items() if n.endswith(".mass_step"))
    neg = max(c["value"] for n, c in cm.items() if n.endswith(".negative_part"))
    ok = ok and all(c["threshold"] <= 1e-10 for n, c in cm.items() if n.endswith(".mass_step"))
    log_line(acceptance_log, 5, ok,
             f"mass={mass:.3g} negative_part={neg:.3g} worst_apriori_excess={excess:.3g} "
             f"renorm_ladder_decreasing={bool(cm['renormalization_ladder_decreasing']['passed'])}", rec)
    assert_criterion(rec, ok)


def test_criterion_6_sqrt_selection(records, acceptance_log):
    rec, cm, ok, detail = evaluate(records, 6, ["zero.halving_ratio_vs_sqrt_half",
                                                "infinite.atom_relative_error"])
    literal = cm["zero.literal_halving"]
    # as written the criterion asks for literal halving; the closed form gives 1/sqrt(2)
    log_line(acceptance_log, 6, ok and literal["passed"],
             f"{detail} literal_halving_ratio={literal['value']:.4f} (target 0.5)", rec)
    assert_criterion(rec, ok)


@pytest.mark.xfail(strict=True, reason="zero-selection bin mass scales like sqrt(bin width), ratio 1/sqrt(2)")
def test_criterion_6_literal_halving(records):
    assert check_map(records["sqrt-selection"])["zero.literal_halving"]["passed"]


def test_criterion_7_superposition(records, acceptance_log):
    rec, cm, ok, detail = evaluate(records, 7, ["max_dual_gap", "metric_speed_ratio_deviation"])
    log_line(acceptance_log, 7, ok, f"{detail} gap_bound={cm['max_dual_gap']['threshold']:.4g}", rec)
    assert_criterion(rec, ok)


def test_criterion_8_no_splitting(records, acceptance_log):
    rec, cm, ok, detail = evaluate(records, 8, ["smooth_min_concentration", "split_concentration"])
    log_line(acceptance_log, 8, ok, detail, rec)
    assert_criterion(rec, ok)


def test_criterion_9_stochastic(records, acceptance_log):
    rec, cm, ok, detail = evaluate(records, 9, ["degenerate_fp_vs_continuity", "N100000.defect_minus_3se",
                                                "stderr_slope_deviation", "fp_empirical_gap",
                                                "energy_ratio_0_rel_deviation", "energy_ratio_1_rel_deviation"])
    log_line(acceptance_log, 9, ok, detail, rec)
    assert_criterion(rec, ok)


def test_criterion_10_determinism(records, acceptance_log, tmp_path):
    cfg = load_config(overrides={"run": {"threads": 4, "out": str(tmp_path)}})
    with ThreadPoolExecutor(max_workers=4) as pool:
        rerun = dict(zip(REGISTRY, pool.map(lambda n: run_scenario(n, cfg, str(tmp_path / n)), REGISTRY)))
    differing = [n for n in REGISTRY if rerun[n]["metrics_hash"] != records[n]["metrics_hash"]]
    same_inputs = all(rerun[n]["input_hash"] == records[n]["input_hash"] for n in REGISTRY)
    ok = not differing and same_inputs
    log_line(acceptance_log, 10, ok,
             f"scenarios={len(REGISTRY)} threads=1 vs 4 hash_mismatches={len(differing)}"
             + (f" ({','.join(differing)})" if differing else ""))
    assert same_inputs
    assert not differing
