"""TOML experiment configuration with printable defaults."""
from __future__ import annotations

import copy
import hashlib
import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

DEFAULTS = {
    "run": {"scenario": "trivial-transport", "seed": 0, "out": "runs", "threads": 1,
            "tol_scale": 1.0},
    "space": {"kind": "torus", "N": 64, "d": 1, "L": 6.283185307179586, "n": 16,
              "generator": "random", "measure": "uniform", "seed": 0, "dictionary_size": 32},
    "field": {"kind": "compressive", "amplitude": 0.5, "frequency": 8, "eps": 0.0},
    "evolution": {"T": 1.0, "dt": 0.01, "sigma": 0.0, "r": [2.0, 4.0, "inf"],
                  "beta": "square", "source": "none", "density": "smooth"},
    "commutator": {"k_max": 8, "order": 32, "trials": 8},
    "rlf": {"selection": "zero", "tau": 1.0, "M": 100000, "c_max": 2.0, "T": 1.0, "dt": 0.05,
            "t": 1.0, "bin_width": 0.001, "refinements": 2},
    "ensemble": {"N": 20000, "eps": 0.002, "dt": 0.05, "initial_bins": 64,
                 "target_bins": 2},
    "sde": {"a": 1.0, "N": 10000, "dt": 0.01, "T": 1.0, "save_every": 10,
            "bins": 8, "s_grid": [0.2, 0.5], "t_grid": [0.5, 1.0]},
    "tolerances": {"mass": 1e-10, "semigroup": 1e-10, "adjoint": 1e-10, "representation": 1e-8,
                   "apriori": 1e-8, "degeneration": 1e-12, "step_factor": 1e-8},
}


class ConfigError(ValueError):
    pass


SELECTIONS = ("zero", "constant", "infinite", "randomized")


def validate_config(cfg):
    """Raise :class:`ConfigError` when a section names a preset that does not exist."""
    from .fields import FIELD_PRESETS
    from .scenarios import REGISTRY

    for sec in DEFAULTS:
        if sec not in cfg or not isinstance(cfg[sec], dict):
            raise ConfigError(f"missing section [{sec}]")
    checks = [("run.scenario", cfg["run"]["scenario"], tuple(REGISTRY) + ("all",)),
              ("space.kind", cfg["space"]["kind"], ("graph", "torus")),
              ("field.kind", cfg["field"]["kind"], FIELD_PRESETS),
              ("evolution.beta", cfg["evolution"]["beta"], ("identity", "square")),
              ("evolution.density", cfg["evolution"]["density"], ("smooth", "uniform")),
              ("rlf.selection", cfg["rlf"]["selection"], SELECTIONS)]
    for key, val, allowed in checks:
        if val not in allowed:
            raise ConfigError(f"{key} = {val!r} is not one of {', '.join(map(str, allowed))}")
    unknown = set(cfg["tolerances"]) - set(DEFAULTS["tolerances"])
    if unknown:
        raise ConfigError(f"unknown tolerances: {sorted(unknown)}")
    if not isinstance(cfg["run"]["seed"], int):
        raise ConfigError("run.seed must be an explicit integer")
    return cfg


def deep_merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides=None):
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        with open(path, "rb") as fh:
            cfg = deep_merge(cfg, tomllib.load(fh))
    if overrides:
        cfg = deep_merge(cfg, overrides)
    return cfg


def parse_config(text):
    return deep_merge(DEFAULTS, tomllib.loads(text))


def dump_config(cfg=None):
    return tomli_w.dumps(cfg if cfg is not None else DEFAULTS)


def tolerance(cfg, name):
    return float(cfg["tolerances"][name]) * float(cfg["run"].get("tol_scale", 1.0))


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def content_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def parse_r(values):
    return [float("inf") if str(v).lower() in ("inf", "infinity") else float(v) for v in values]
