"""Run configuration: TOML file, built-in defaults and flag overrides."""

import copy
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigurationError

DEFAULT_SUBSTATIONS = [[43.55, -5.79], [43.30, -6.67]]
DEFAULT_RISK = [0.20, 0.57, 0.67, 0.77, 0.87, 0.97]
MODES = ("siting", "sizing", "joint")

DEFAULTS = {
    "run": {"id": None, "outdir": "runs", "seed": 0},
    "field": {
        "source": "synth",
        "path": None,
        "scenario": "plain",
        "shape": [5, 5],
        "hours": 2000,
        "base_mean": 7.0,
        "autocorrelation": 0.8,
        "correlation_length": 0.2,
        "noise_std": 2.0,
        "lat0": 42.9,
        "lon0": -7.1,
        "spacing": 0.1,
    },
    "curve": {"csv": None, "json": None},
    "sampling": {
        "n_iters": 1000,
        "hours_per_iter": 3000,
        "total_turbines": 40,
        "ratios": [0.7, 0.15, 0.15],
    },
    "training": {
        "hidden": [64, 64],
        "epochs": 50,
        "batch_size": 512,
        "learning_rate": 1e-3,
    },
    "eval": {"lco": False, "partners_per_center": 4},
    "screen": {"enabled": True, "n_turbines": 20, "k": 3, "n_regions": 3},
    "econ": {
        "lambda_ppa": 60.0,
        "c_line": 5000.0,
        "hours_per_year": 8760.0,
        "substations": DEFAULT_SUBSTATIONS,
    },
    "risk": {"levels": DEFAULT_RISK},
    "experiment": {
        "modes": list(MODES),
        "backend": "enumerate",
        "fixed_sizes": [20, 20],
        "fixed_sites": None,
        "candidate_stride": 1,
        "exclude_dominant": True,
        "exclude_box": None,
        "regions": ["all"],
        "size_stride": 10,
        "n_cuts": 16,
        "gap": 0.01,
        "time_limit": 600,
        "verify_tol": 1e-5,
        "workers": 1,
    },
    "solver": {"cmd": None},
}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigurationError(f"unknown config key {path}{k}")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigurationError(f"config key {path}{k} must be a table")
            out[k] = _merge(out[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None):
    """Defaults, then the TOML file, then ``overrides`` (same nesting)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        try:
            doc = tomllib.loads(path.read_text(encoding="utf-8"))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        cfg = _merge(cfg, doc)
        base = path.parent
        for sec, key in (("field", "path"), ("curve", "csv"), ("curve", "json")):
            p = cfg[sec][key]
            if p and not Path(p).is_absolute():
                cfg[sec][key] = str((base / p).resolve())
        if cfg["run"]["id"] is None:
            cfg["run"]["id"] = path.stem
    if overrides:
        cfg = _merge(cfg, overrides)
    if cfg["run"]["id"] is None:
        cfg["run"]["id"] = "default"
    validate(cfg)
    return cfg


def validate(cfg):
    levels = cfg["risk"]["levels"]
    if not levels or any(not 0 < float(b) <= 1 for b in levels):
        raise ConfigurationError("risk levels must lie in (0, 1]")
    for m in cfg["experiment"]["modes"]:
        if m not in MODES:
            raise ConfigurationError(f"unknown experiment mode {m!r}")
    if cfg["experiment"]["backend"] not in ("enumerate", "external", "scipy"):
        raise ConfigurationError(f"unknown backend {cfg['experiment']['backend']!r}")
    if cfg["field"]["source"] not in ("synth", "csv"):
        raise ConfigurationError("field.source must be 'synth' or 'csv'")
    if cfg["field"]["source"] == "csv" and not cfg["field"]["path"]:
        raise ConfigurationError("field.source = 'csv' needs field.path")
    if not cfg["econ"]["substations"]:
        raise ConfigurationError("at least one substation is required")
    return cfg
