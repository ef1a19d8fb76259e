"""Command-line entry point: ``rlflab <command> [options]``."""
from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import arrayio
from . import commutator as cm
from . import continuity as ce
from . import derivation as dv
from . import fields as F
from . import lagrangian as lg
from . import stochastic as st
from . import superposition as sup
from .config import ConfigError, content_hash, dump_config, load_config, parse_r, validate_config
from .parallel import set_threads
from .report import report
from .scenarios import ACCEPTANCE, REGISTRY, run_scenario
from .space import construct_space

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _common():
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="TOML configuration file")
    p.add_argument("--seed", type=int, default=S, help="master seed")
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("--threads", type=int, default=S, help="worker threads")
    p.add_argument("--tol-scale", type=float, default=S, help="multiply every tolerance")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="rlflab", parents=[common],
                                     description="Flows of non-smooth vector fields on Dirichlet spaces.")
    sub = parser.add_subparsers(dest="command", required=True)

    def group(name, help_, actions):
        g = sub.add_parser(name, help=help_)
        gs = g.add_subparsers(dest="action", required=True)
        return {a: gs.add_parser(a, parents=[common], help=h) for a, h in actions}

    group("space", "build a space", [("build", "construct and describe a space")])
    group("ce", "continuity equation", [("solve", "solve from the configured field and datum")])
    group("commutator", "commutator estimates", [("scan", "scan alpha and write the bound table")])
    group("rlf", "Lagrangian flows", [("run", "integrate a flow and write atom diagnostics")])
    sub.add_parser("superpose", parents=[common], help="lift a density path to trajectories")
    group("fp", "Fokker-Planck equation", [("solve", "solve the forward equation")])
    group("sde", "diffusions", [("sample", "Euler-Maruyama ensemble")])
    group("martingale", "martingale problem", [("check", "binned martingale defects")])
    r = sub.add_parser("run", parents=[common], help="run a named scenario")
    r.add_argument("scenario", nargs="?", help="scenario name or 'all'")
    r.add_argument("--list", action="store_true", help="list scenarios")
    rp = sub.add_parser("report", parents=[common], help="summarise a record or run directory")
    rp.add_argument("path")
    group("config", "configuration", [("dump", "print the effective configuration")])
    return parser


def effective_config(args):
    over = {"run": {}}
    for key, dest in (("seed", "seed"), ("out", "out"), ("threads", "threads"), ("tol_scale", "tol_scale")):
        if hasattr(args, key):
            over["run"][dest] = getattr(args, key)
    cfg = load_config(getattr(args, "config", None), over)
    return validate_config(cfg)


# ---------------------------------------------------------------- helpers
def _initial_density(space, cfg):
    if cfg["evolution"]["density"] == "uniform":
        u = np.ones(space.n)
        return u / space.integrate(u)
    return cm.smooth_density(space, cfg["run"]["seed"])


def _torus_field(cfg, space):
    fld = F.field_from_config(cfg["field"], space.d, space.L)
    if getattr(fld, "d", space.d) != space.d:
        raise ConfigError(f"field.kind = {cfg['field']['kind']!r} is {fld.d}-dimensional "
                          f"but space.d = {space.d}")
    return fld


def _derivation(cfg, space):
    if space.kind == "torus":
        return dv.from_field(space, _torus_field(cfg, space))
    if "flow_file" in cfg["field"]:
        return dv.load_graph_flow(space, cfg["field"]["flow_file"])
    rng = np.random.default_rng(cfg["run"]["seed"])
    return dv.random_divergence_free_flow(space, rng, scale=float(cfg["field"]["amplitude"]))


def _need_torus(space, what):
    if space.kind != "torus":
        raise ConfigError(f"{what} needs space.kind = 'torus'")


def _problem(cfg, space):
    ev = cfg["evolution"]
    return ce.EvolutionProblem(space, _derivation(cfg, space), _initial_density(space, cfg),
                               float(ev["T"]), float(ev["dt"]), sigma=float(ev["sigma"]))


def _operator(cfg, space):
    _need_torus(space, "the Kolmogorov operator")
    a = cfg["sde"]["a"]
    a = float(a) if not isinstance(a, list) else F.TrigSeries(tuple((float(x), tuple(k), kd) for x, k, kd in a))
    return st.kolmogorov_operator(space, _torus_field(cfg, space), a)


def _out(cfg):
    d = cfg["run"]["out"]
    os.makedirs(d, exist_ok=True)
    return d


# ---------------------------------------------------------------- commands
def cmd_space_build(cfg, args):
    space = construct_space(cfg["space"])
    out = _out(cfg)
    info = space.describe()
    info["config_hash"] = content_hash(cfg["space"])
    arrayio.write_json(os.path.join(out, "space.json"), info)
    arrayio.save_array(os.path.join(out, "dictionary.rfl"), space.dictionary)
    if space.kind == "graph":
        arrayio.save_array(os.path.join(out, "eigenvalues.rfl"), space.eigenvalues)
    print(" ".join(f"{k}={v}" for k, v in info.items()))
    return EXIT_OK


def cmd_ce_solve(cfg, args):
    space = construct_space(cfg["space"])
    path = ce.solve(_problem(cfg, space))
    out = _out(cfg)
    arrayio.save_array(os.path.join(out, "density.rfl"), path.densities)
    path.write_csv(os.path.join(out, "path.csv"))
    rows = []
    for r in parse_r(cfg["evolution"]["r"]):
        a = ce.apriori_check(path, r=r, tol=float(cfg["tolerances"]["apriori"]))
        rows.append({"r": "inf" if math.isinf(r) else r, "lhs_plus": a.lhs["+"], "rhs_plus": a.rhs["+"],
                     "lhs_minus": a.lhs["-"], "rhs_minus": a.rhs["-"], "margin": a.margin,
                     "passed": a.passed})
    arrayio.write_csv(os.path.join(out, "apriori.csv"), rows)
    print(f"steps={len(path.times) - 1} mass_drift={np.max(np.abs(path.masses() - path.masses()[0])):.3e} "
          f"max_residual={path.residuals.max():.3e} apriori={'ok' if all(r['passed'] for r in rows) else 'violated'}")
    return EXIT_OK


def cmd_commutator_scan(cfg, args):
    c_cfg = cfg["commutator"]
    alphas = cm.dyadic_alphas(int(c_cfg["k_max"]))
    space = construct_space(cfg["space"])
    if space.kind == "graph":
        space, b, v = cm.random_graph_instance(space.n, cfg["run"]["seed"])
    else:
        b = _derivation(cfg, space)
        v = cm.smooth_density(space, cfg["run"]["seed"])
    rep = cm.bound_check(space, b, [v], alphas, trials=int(c_cfg["trials"]), seed=cfg["run"]["seed"],
                         quadrature_order=int(c_cfg["order"]))
    out = _out(cfg)
    arrayio.write_csv(os.path.join(out, "commutator.csv"), rep.rows(),
                      ["alpha", "norm_43", "norm_1", "residual", "ratio"])
    print(f"max_ratio={rep.bound_constant:.4g} slope={rep.slope} dsym_estimate={rep.dsym_estimate:.4g}")
    return EXIT_OK


def cmd_rlf_run(cfg, args):
    rc = cfg["rlf"]
    out = _out(cfg)
    rows = []
    if cfg["field"]["kind"] == "sqrt-abs":
        rule = lg.SelectionRule(rc["selection"], tau=float(rc["tau"]), seed=cfg["run"]["seed"])
        fm = lg.sqrt_example_flow(rule, float(rc["T"]), float(rc["dt"]), int(rc["M"]), float(rc["c_max"]))
        for t in fm.times[1:]:
            res = lg.pushforward_ac_test(fm, float(t), float(rc["bin_width"]), int(rc["refinements"]))
            rows.append({"t": float(t), "atom_mass": res["atom_mass_at_zero"],
                         "max_ratio": res["max_density_ratio"], "jacobian_min": "", "jacobian_max": ""})
    else:
        space = construct_space(cfg["space"])
        _need_torus(space, "rlf run with a torus preset")
        fld = _torus_field(cfg, space)
        rng = np.random.default_rng(cfg["run"]["seed"])
        x0 = rng.uniform(0.0, space.L, size=(int(rc["M"]), space.d))
        fm = lg.integrate_flow(fld, float(rc["T"]), float(rc["dt"]), x0)
        bw = float(rc["bin_width"])
        for k, t in enumerate(fm.times[1:], start=1):
            x = np.mod(fm.X[k], space.L)
            bins = max(1, int(round(space.L / bw)))
            idx = sup._cell_index(x, [0.0] * space.d, [space.L] * space.d, bins)
            counts = np.bincount(idx)
            J = np.exp(fm.logJ[k])
            rows.append({"t": float(t), "atom_mass": float(counts.max() / len(x)),
                         "max_ratio": float(counts.max() / len(x) * bins ** space.d),
                         "jacobian_min": float(J.min()), "jacobian_max": float(J.max())})
    arrayio.save_array(os.path.join(out, "trajectories.rfl"), fm.X)
    arrayio.write_csv(os.path.join(out, "rlf.csv"), rows,
                      ["t", "atom_mass", "max_ratio", "jacobian_min", "jacobian_max"])
    last = rows[-1]
    print(f"t={last['t']:.4g} atom_mass={last['atom_mass']:.4g} max_ratio={last['max_ratio']:.4g}")
    return EXIT_OK


def cmd_superpose(cfg, args):
    space = construct_space(cfg["space"])
    _need_torus(space, "superpose")
    e = cfg["ensemble"]
    path = ce.solve(_problem(cfg, space))
    ens = sup.lift_solution(space, path, path.problem.b, float(e["eps"]), int(e["N"]), cfg["run"]["seed"],
                            dt=float(e["dt"]))
    ts = [float(t) for t in path.times if np.min(np.abs(ens.times - t)) < 1e-9]
    rows = sup.marginal_consistency(ens, path, ts, space)
    key = "w1" if space.d == 1 else "dual_gap"
    out = _out(cfg)
    arrayio.write_csv(os.path.join(out, "marginals.csv"),
                      [{"t": r["t"], "w1_or_dualgap": r[key]} for r in rows])
    ns = sup.no_splitting_diagnostic(ens, float(ens.times[-1]), int(e["initial_bins"]), int(e["target_bins"]))
    arrayio.write_csv(os.path.join(out, "bins.csv"),
                      [{"bin_id": int(i), "concentration": float(c)}
                       for i, c in zip(ns["bin_ids"], ns["per_bin"])])
    arrayio.save_array(os.path.join(out, "paths.rfl"), ens.paths)
    print(f"N={ens.size} max_{key}={max(r[key] for r in rows):.4g} "
          f"threshold={5 / math.sqrt(ens.size):.4g} concentration={ns['concentration']:.4g}")
    return EXIT_OK


def cmd_fp_solve(cfg, args):
    space = construct_space(cfg["space"])
    op = _operator(cfg, space)
    s = cfg["sde"]
    path = st.fokker_planck_solve(op, _initial_density(space, cfg), float(s["T"]), float(s["dt"]))
    out = _out(cfg)
    arrayio.save_array(os.path.join(out, "density.rfl"), path.densities)
    path.write_csv(os.path.join(out, "path.csv"))
    print(f"steps={len(path.times) - 1} mass_drift={np.max(np.abs(path.masses() - path.masses()[0])):.3e} "
          f"degenerate={op.degenerate}")
    return EXIT_OK


def _sample(cfg, space):
    s = cfg["sde"]
    op = _operator(cfg, space)
    return st.sde_sample(op, _initial_density(space, cfg), int(s["N"]), float(s["dt"]), float(s["T"]),
                         cfg["run"]["seed"], save_every=int(s["save_every"]))


def cmd_sde_sample(cfg, args):
    space = construct_space(cfg["space"])
    ens = _sample(cfg, space)
    out = _out(cfg)
    arrayio.save_array(os.path.join(out, "paths.rfl"), ens.paths)
    arrayio.save_array(os.path.join(out, "martingales.rfl"), ens.martingales)
    arrayio.write_csv(os.path.join(out, "times.csv"), [{"t": float(t)} for t in ens.times])
    print(f"N={ens.size} checkpoints={len(ens.times)} tests={len(ens.test_ids)}")
    return EXIT_OK


def cmd_martingale_check(cfg, args):
    space = construct_space(cfg["space"])
    ens = _sample(cfg, space)
    s = cfg["sde"]
    md = st.martingale_defect(ens, s["s_grid"], s["t_grid"], int(s["bins"]))
    out = _out(cfg)
    arrayio.write_csv(os.path.join(out, "defects.csv"), md["rows"],
                      ["f_id", "s", "t", "bin", "defect", "stderr"])
    sm = md["summary"]
    ok = sm["defect"] <= 3 * sm["stderr"]
    print(f"defect={sm['defect']:.4g} stderr={sm['stderr']:.4g} low_power_bins={sm['low_power_bins']} "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def _run_one(name, cfg):
    out = os.path.join(cfg["run"]["out"], name)
    return run_scenario(name, cfg, out)


def cmd_run(cfg, args):
    if args.list:
        for name, fn in REGISTRY.items():
            crit = f"criterion {fn.criterion}" if fn.criterion else ""
            print(f"{name:28s} {crit}")
        return EXIT_OK
    name = args.scenario or cfg["run"]["scenario"]
    if name != "all" and name not in REGISTRY:
        print(f"unknown scenario {name!r}; try 'rlflab run --list'", file=sys.stderr)
        return EXIT_USAGE
    names = list(REGISTRY) if name == "all" else [name]
    workers = max(1, min(int(cfg["run"]["threads"]), len(names)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        records = list(pool.map(lambda n: _run_one(n, cfg), names))
    code = EXIT_OK
    for rec in records:
        print(f"RESULT {rec['scenario']} {'PASS' if rec['passed'] else 'FAIL'} {rec['n_checks']}")
        if not rec["passed"]:
            print(f"first failing check in {rec['scenario']}: {rec['first_failure']}", file=sys.stderr)
            code = EXIT_FAIL
    return code


def cmd_report(cfg, args):
    if not os.path.exists(args.path):
        print(f"no such record or directory: {args.path}", file=sys.stderr)
        return EXIT_USAGE
    rep = report(args.path)
    print(rep["text"])
    for p in rep["plots"]:
        print(f"plot {p}")
    return EXIT_OK


def cmd_config_dump(cfg, args):
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


COMMANDS = {
    ("space", "build"): cmd_space_build, ("ce", "solve"): cmd_ce_solve,
    ("commutator", "scan"): cmd_commutator_scan, ("rlf", "run"): cmd_rlf_run,
    ("superpose", None): cmd_superpose, ("fp", "solve"): cmd_fp_solve,
    ("sde", "sample"): cmd_sde_sample, ("martingale", "check"): cmd_martingale_check,
    ("run", None): cmd_run, ("report", None): cmd_report, ("config", "dump"): cmd_config_dump,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = effective_config(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    set_threads(int(cfg["run"]["threads"]))
    fn = COMMANDS[(args.command, getattr(args, "action", None))]
    try:
        return fn(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


__all__ = ["main", "build_parser", "ACCEPTANCE"]
