import csv
import json

import numpy as np
import pytest
import tomli_w

from rlflab import arrayio
from rlflab import lagrangian as lg
from rlflab import scenarios
from rlflab.cli import main
from rlflab.config import parse_config


def write_cfg(tmp_path, **sections):
    p = tmp_path / "cfg.toml"
    p.write_bytes(tomli_w.dumps(sections).encode())
    return str(p)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def out(tmp_path):
    return str(tmp_path / "out")


def test_config_dump_round_trips(capsys):
    assert main(["config", "dump", "--seed", "5"]) == 0
    cfg = parse_config(capsys.readouterr().out)
    assert cfg["run"]["seed"] == 5


def test_global_flags_before_subcommand(capsys):
    assert main(["--seed", "7", "config", "dump"]) == 0
    assert parse_config(capsys.readouterr().out)["run"]["seed"] == 7


def test_invalid_config_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, space={"kind": "sphere"})
    assert main(["config", "dump", "--config", cfg]) == 2
    assert "space.kind" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert main(["config", "dump", "--config", str(tmp_path / "none.toml")]) == 2


def test_space_build_torus_and_graph(tmp_path, out):
    assert main(["space", "build", "--out", out]) == 0
    info = json.loads(open(f"{out}/space.json").read())
    assert info["kind"] == "torus"
    assert arrayio.load_array(f"{out}/dictionary.rfl").shape[0] == 32
    cfg = write_cfg(tmp_path, space={"kind": "graph", "n": 10})
    gout = str(tmp_path / "g")
    assert main(["space", "build", "--config", cfg, "--out", gout]) == 0
    ev = arrayio.load_array(f"{gout}/eigenvalues.rfl")
    assert ev.shape == (10,)
    assert np.all(ev <= 1e-10)
    assert abs(ev.max()) < 1e-10


def test_ce_solve_outputs(tmp_path, out, capsys):
    cfg = write_cfg(tmp_path, evolution={"T": 0.2, "dt": 0.02})
    assert main(["ce", "solve", "--config", cfg, "--out", out]) == 0
    dens = arrayio.load_array(f"{out}/density.rfl")
    assert dens.shape == (11, 64)
    ap = rows(f"{out}/apriori.csv")
    assert [r["r"] for r in ap] == ["2.0", "4.0", "inf"]
    assert all(r["passed"] == "True" for r in ap)
    assert "mass_drift" in capsys.readouterr().out


def test_field_dimension_mismatch_exits_2(tmp_path, out, capsys):
    cfg = write_cfg(tmp_path, field={"kind": "shear"})
    assert main(["ce", "solve", "--config", cfg, "--out", out]) == 2
    assert "space.d = 1" in capsys.readouterr().err


def test_commutator_scan_columns(tmp_path, out):
    cfg = write_cfg(tmp_path, space={"N": 32, "d": 2}, field={"kind": "shear"},
                    commutator={"k_max": 3, "trials": 2})
    assert main(["commutator", "scan", "--config", cfg, "--out", out]) == 0
    r = rows(f"{out}/commutator.csv")
    assert list(r[0]) == ["alpha", "norm_43", "norm_1", "residual", "ratio"]
    assert [float(x["alpha"]) for x in r] == [0.5, 0.25, 0.125]


def test_rlf_run_sqrt_example(tmp_path, out):
    cfg = write_cfg(tmp_path, field={"kind": "sqrt-abs"},
                    rlf={"selection": "zero", "M": 4000, "T": 1.0, "dt": 0.25, "bin_width": 0.01})
    assert main(["rlf", "run", "--config", cfg, "--out", out]) == 0
    r = rows(f"{out}/rlf.csv")
    assert list(r[0]) == ["t", "atom_mass", "max_ratio", "jacobian_min", "jacobian_max"]
    # bin mass near the origin, not an atom
    assert float(r[-1]["atom_mass"]) == pytest.approx(lg.atom_mass_oracle("zero", 1.0, 0.01), abs=0.01)
    assert arrayio.load_array(f"{out}/trajectories.rfl").shape[1] == 4000


def test_rlf_run_torus_field(tmp_path, out):
    cfg = write_cfg(tmp_path, field={"kind": "compressive"},
                    rlf={"M": 2000, "T": 0.5, "dt": 0.1, "bin_width": 0.1})
    assert main(["rlf", "run", "--config", cfg, "--out", out]) == 0
    r = rows(f"{out}/rlf.csv")
    assert float(r[-1]["jacobian_min"]) < 1 < float(r[-1]["jacobian_max"])


def test_superpose_outputs(tmp_path, out):
    cfg = write_cfg(tmp_path, space={"N": 32}, evolution={"T": 0.5, "dt": 0.05},
                    ensemble={"N": 4000, "eps": 0.01, "dt": 0.05, "initial_bins": 16})
    assert main(["superpose", "--config", cfg, "--out", out]) == 0
    m = rows(f"{out}/marginals.csv")
    assert list(m[0]) == ["t", "w1_or_dualgap"]
    assert max(float(r["w1_or_dualgap"]) for r in m) < 5 / np.sqrt(4000) + 0.02
    b = rows(f"{out}/bins.csv")
    assert list(b[0]) == ["bin_id", "concentration"]
    assert arrayio.load_array(f"{out}/paths.rfl").shape[1] == 4000


def test_fp_solve_and_sde_sample(tmp_path, out):
    cfg = write_cfg(tmp_path, field={"kind": "zero"}, sde={"a": 1.0, "N": 1000, "T": 0.2, "dt": 0.02,
                                                        "save_every": 5})
    assert main(["fp", "solve", "--config", cfg, "--out", out]) == 0
    assert arrayio.load_array(f"{out}/density.rfl").shape == (11, 64)
    assert main(["sde", "sample", "--config", cfg, "--out", out]) == 0
    assert arrayio.load_array(f"{out}/paths.rfl").shape == (3, 1000, 1)
    assert [float(r["t"]) for r in rows(f"{out}/times.csv")] == pytest.approx([0.0, 0.1, 0.2])


def test_fp_requires_torus(tmp_path, out, capsys):
    cfg = write_cfg(tmp_path, space={"kind": "graph"})
    assert main(["fp", "solve", "--config", cfg, "--out", out]) == 2
    assert "torus" in capsys.readouterr().err


def test_martingale_check_passes_for_brownian(tmp_path, out, capsys):
    cfg = write_cfg(tmp_path, field={"kind": "zero"},
                    sde={"a": 1.0, "N": 4000, "T": 1.0, "dt": 0.02, "save_every": 5, "bins": 4,
                         "s_grid": [0.2], "t_grid": [1.0]})
    assert main(["martingale", "check", "--config", cfg, "--out", out]) == 0
    r = rows(f"{out}/defects.csv")
    assert list(r[0]) == ["f_id", "s", "t", "bin", "defect", "stderr"]
    assert "PASS" in capsys.readouterr().out


def test_run_list(capsys):
    assert main(["run", "--list"]) == 0
    text = capsys.readouterr().out
    assert "trivial-transport" in text
    assert "stochastic-suite" in text


def test_run_unknown_scenario_exits_2(capsys, out):
    assert main(["run", "nope", "--out", out]) == 2
    assert "unknown scenario" in capsys.readouterr().err


def test_run_writes_record_and_result_line(out, capsys):
    assert main(["run", "trivial-transport", "--out", out]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    name, status, n = line.split()[1:]
    assert (name, status) == ("trivial-transport", "PASS")
    rec = json.loads(open(f"{out}/trivial-transport/record.json").read())
    assert rec["n_checks"] == int(n)


def test_run_failure_names_first_check(out, capsys, monkeypatch):
    def failing(ctx):
        ctx.check("fine", 0.0, "<=", 1.0)
        ctx.check("broken", 2.0, "<=", 1.0)

    failing.criterion = None
    monkeypatch.setitem(scenarios.REGISTRY, "trivial-transport", failing)
    assert main(["run", "trivial-transport", "--out", out]) == 1
    cap = capsys.readouterr()
    assert "FAIL" in cap.out
    assert "first failing check in trivial-transport: broken" in cap.err


def test_report_on_run_directory(out, capsys):
    main(["run", "trivial-transport", "--out", out])
    main(["run", "commutator-identity-graph", "--out", out])
    capsys.readouterr()
    assert main(["report", out]) == 0
    text = capsys.readouterr().out
    i, j = text.index("commutator-identity-graph"), text.index("trivial-transport")
    assert i < j
    assert "total asserted checks" in text


def test_report_empty_record(tmp_path, capsys):
    p = tmp_path / "record.json"
    p.write_text("")
    assert main(["report", str(p)]) == 0
    assert "total asserted checks: 0" in capsys.readouterr().out


def test_report_missing_path_exits_2(tmp_path):
    assert main(["report", str(tmp_path / "nothing")]) == 2
