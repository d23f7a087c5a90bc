"""Experiment configuration: YAML parsing, validation and canonical echo.

A config is a single YAML mapping::

    experiment: kalman_compare
    model:
      name: linear_gaussian
      params: {rho: 0.5}
    grid: {T: 1.0, n_steps: 1000}
    filter: {n_particles: 10000, resampling: systematic, mode: fkk}
    seeds: {master: 7, n_replicas: 4}
    output_dir: results/kalman
    options: {rmse_tol: 0.05}

Every violation is reported with its dotted path; unknown keys are errors.
"""

from __future__ import annotations

import copy
import hashlib
import json
import numbers
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .zoo import MODEL_ZOO

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "validate_config",
]

EXPERIMENTS = {
    "simulate": "simulate system paths and check the observation decomposition",
    "girsanov_check": "Monte Carlo test of E gamma_T = 1",
    "filter_run": "run the particle filter along simulated observations",
    "zakai_residual": "residual of the unnormalized filter equation",
    "fkk_residual": "residual of the normalized filter equation",
    "kalman_compare": "particle filter against Kalman-Bucy on a linear model",
    "grid_compare": "particle filter against the 1-D grid density solver",
    "projection_test": "bin tests of the conditional stochastic integral identities",
    "assumption_check": "growth-condition checks of a zoo model",
}

_FILTER_DEFAULTS = {"n_particles": 1000, "resampling": "none", "resample_threshold": 0.5, "mode": "zakai"}

# option name -> (default, validator description, check)
_POS_INT = ("positive integer", lambda v: _is_int(v) and v >= 1)
_POS_NUM = ("positive number", lambda v: _is_num(v) and v > 0)
_BOOL = ("boolean", lambda v: isinstance(v, bool))
_NUM = ("number", lambda v: _is_num(v))
_FRACTION = ("number in (0, 1)", lambda v: _is_num(v) and 0 < v < 1)

_OPTIONS: dict[str, dict[str, tuple[Any, tuple]]] = {
    "simulate": {
        "jump_adapted": (False, _BOOL),
        "clip_radius": (None, ("positive number or null", lambda v: v is None or (_is_num(v) and v > 0))),
        "detect_threshold": (None, ("positive number or null", lambda v: v is None or (_is_num(v) and v > 0))),
    },
    "girsanov_check": {"n_paths": (100_000, _POS_INT)},
    "filter_run": {
        "decomposition": ("oracle", ("'oracle' or 'detect'", lambda v: v in ("oracle", "detect"))),
        "dump_particles": (False, _BOOL),
        "snapshot_every": (None, ("positive integer or null", lambda v: v is None or (_is_int(v) and v >= 1))),
    },
    "zakai_residual": {
        "refine_check": (True, _BOOL),
        "residual_constant": (None, ("positive number or null", lambda v: v is None or (_is_num(v) and v > 0))),
    },
    "fkk_residual": {
        "refine_check": (True, _BOOL),
        "residual_constant": (None, ("positive number or null", lambda v: v is None or (_is_num(v) and v > 0))),
    },
    "kalman_compare": {"rmse_tol": (0.05, _FRACTION), "var_tol": (0.10, _FRACTION)},
    "grid_compare": {
        "x_min": (-4.0, _NUM),
        "x_max": (6.0, _NUM),
        "dx": (0.02, _POS_NUM),
        "rel_tol": (0.03, _FRACTION),
        "mass_tol": (1e-8, _POS_NUM),
    },
    "projection_test": {
        "n_mc": (100_000, _POS_INT),
        "n_bins": (5, _POS_INT),
        "fixtures": (None, ("list of fixture names or null", lambda v: v is None or (isinstance(v, list) and all(isinstance(s, str) for s in v)))),
    },
    "assumption_check": {"n_samples": (512, _POS_INT), "radius": (10.0, _POS_NUM)},
}

# experiments that run the particle filter
FILTER_EXPERIMENTS = {"filter_run", "zakai_residual", "fkk_residual", "kalman_compare", "grid_compare"}


def _is_int(v) -> bool:
    return isinstance(v, numbers.Integral) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, numbers.Real) and not isinstance(v, bool)


class ConfigError(ValueError):
    """Validation failure carrying every ``(path, message)`` violation."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{p}: {m}" if m != "required" else f"{p} required" for p, m in errors))

    def lines(self) -> list[str]:
        return [f"{p} required" if m == "required" else f"{p}: {m}" for p, m in self.errors]


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    model_name: str
    model_params: dict
    T: float
    n_steps: int
    filter: dict
    seed: int
    n_replicas: int
    output_dir: str
    options: dict
    workers: int = 1
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict:
        """Canonical nested form with all defaults filled in."""
        return {
            "experiment": self.experiment,
            "model": {"name": self.model_name, "params": dict(sorted(self.model_params.items()))},
            "grid": {"T": self.T, "n_steps": self.n_steps},
            "filter": dict(sorted(self.filter.items())),
            "seeds": {"master": self.seed, "n_replicas": self.n_replicas},
            "output_dir": self.output_dir,
            "workers": self.workers,
            "options": dict(sorted(self.options.items())),
        }

    def canonical(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def config_hash(self) -> str:
        """SHA-256 of the canonical form, ignoring ``output_dir`` and ``workers``."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def output_path(self, root: str | Path | None = None) -> Path:
        p = Path(self.output_dir)
        if root is not None and not p.is_absolute():
            p = Path(root) / p
        return p


def _check_keys(obj: dict, allowed: set, path: str, errors: list):
    for k in sorted(set(obj) - allowed, key=str):
        errors.append((f"{path}.{k}" if path else str(k), f"unknown key (allowed: {', '.join(sorted(allowed))})"))


def _section(raw: dict, key: str, errors: list, required: bool = False) -> dict:
    val = raw.get(key)
    if val is None:
        if required:
            errors.append((key, "required"))
        return {}
    if not isinstance(val, dict):
        errors.append((key, "expected a mapping"))
        return {}
    return val


def _plain(v):
    """Convert YAML scalars/lists to JSON-compatible plain values."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if _is_int(v):
        return int(v)
    if _is_num(v):
        return float(v)
    return v


def validate_config(raw) -> ExperimentConfig:
    """Validate a config given as YAML text or an already-parsed mapping.

    Raises
    ------
    ConfigError
        With one ``(dotted.path, message)`` entry per violation.
    """
    if isinstance(raw, (str, bytes)):
        try:
            raw = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError([("<root>", f"not valid YAML: {exc}")]) from None
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "expected a mapping")])
    raw = copy.deepcopy(raw)
    errors: list[tuple[str, str]] = []
    _check_keys(raw, {"experiment", "model", "grid", "filter", "seeds", "output_dir", "options", "workers"}, "", errors)

    experiment = raw.get("experiment")
    if experiment is None:
        errors.append(("experiment", "required"))
    elif experiment not in EXPERIMENTS:
        errors.append(("experiment", f"expected one of {', '.join(EXPERIMENTS)}"))
        experiment = None

    model = _section(raw, "model", errors, required=True)
    _check_keys(model, {"name", "params"}, "model", errors)
    name = model.get("name")
    params = model.get("params") or {}
    entry = None
    if name is None:
        if "model" in raw:
            errors.append(("model.name", "required"))
    elif name not in MODEL_ZOO:
        errors.append(("model.name", f"unknown model; expected one of {', '.join(MODEL_ZOO)}"))
    else:
        entry = MODEL_ZOO[name]
    if not isinstance(params, dict):
        errors.append(("model.params", "expected a mapping"))
        params = {}
    elif entry is not None:
        _check_keys(params, set(entry.defaults), "model.params", errors)
    params = _plain(params)
    merged = {**entry.defaults, **params} if entry is not None else params

    grid = _section(raw, "grid", errors, required=True)
    _check_keys(grid, {"T", "n_steps"}, "grid", errors)
    T = grid.get("T", merged.get("T", 1.0))
    if not _is_num(T) or T <= 0:
        errors.append(("grid.T", "expected a positive number"))
    n_steps = grid.get("n_steps")
    if n_steps is None:
        if "grid" in raw:
            errors.append(("grid.n_steps", "required"))
    elif not _is_int(n_steps) or n_steps < 1:
        errors.append(("grid.n_steps", "expected an integer >= 1"))
    if entry is not None and "T" in entry.defaults and _is_num(T):
        merged["T"] = float(T)

    filt = _section(raw, "filter", errors)
    _check_keys(filt, set(_FILTER_DEFAULTS), "filter", errors)
    filt = {**_FILTER_DEFAULTS, **filt}
    if not _is_int(filt["n_particles"]) or filt["n_particles"] < 2:
        errors.append(("filter.n_particles", "expected an integer >= 2"))
    if filt["resampling"] not in ("none", "systematic", "multinomial"):
        errors.append(("filter.resampling", "expected one of none, systematic, multinomial"))
    if not _is_num(filt["resample_threshold"]) or not 0 < filt["resample_threshold"] <= 1:
        errors.append(("filter.resample_threshold", "expected a number in (0, 1]"))
    if filt["mode"] not in ("zakai", "fkk"):
        errors.append(("filter.mode", "expected 'zakai' or 'fkk'"))
    elif filt["mode"] == "zakai" and filt["resampling"] != "none":
        errors.append(("filter.resampling", "zakai mode requires 'none'"))
    if experiment == "zakai_residual" and filt["mode"] != "zakai":
        errors.append(("filter.mode", "zakai_residual requires mode 'zakai'"))

    seeds = _section(raw, "seeds", errors)
    _check_keys(seeds, {"master", "n_replicas"}, "seeds", errors)
    seed = seeds.get("master", 0)
    n_rep = seeds.get("n_replicas", 1)
    if not _is_int(seed) or seed < 0:
        errors.append(("seeds.master", "expected a nonnegative integer"))
    if not _is_int(n_rep) or n_rep < 1:
        errors.append(("seeds.n_replicas", "expected an integer >= 1"))

    out = raw.get("output_dir")
    if out is None:
        errors.append(("output_dir", "required"))
    elif not isinstance(out, str) or not out.strip():
        errors.append(("output_dir", "expected a non-empty path string"))

    workers = raw.get("workers", 1)
    if not _is_int(workers) or workers < 1:
        errors.append(("workers", "expected an integer >= 1"))

    opts = _section(raw, "options", errors)
    resolved = {}
    if experiment is not None:
        spec_opts = _OPTIONS[experiment]
        _check_keys(opts, set(spec_opts), "options", errors)
        for k, (default, (desc, ok)) in spec_opts.items():
            v = opts.get(k, default)
            if k in opts and not ok(v):
                errors.append((f"options.{k}", f"expected {desc}"))
            resolved[k] = _plain(v)
        if experiment == "grid_compare" and _is_num(resolved["x_min"]) and _is_num(resolved["x_max"]):
            if resolved["x_max"] <= resolved["x_min"]:
                errors.append(("options.x_max", "must exceed options.x_min"))

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        experiment=experiment,
        model_name=name,
        model_params=merged,
        T=float(T),
        n_steps=int(n_steps),
        filter=_plain(filt),
        seed=int(seed),
        n_replicas=int(n_rep),
        output_dir=out,
        options=resolved,
        workers=int(workers),
        raw=raw,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a YAML config file."""
    return validate_config(Path(path).read_text())
