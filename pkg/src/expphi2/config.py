"""Experiment configuration: YAML file, explicit defaults, field-level validation.

Schema (every key optional; the defaults below are what ``--print-config`` shows)::

    model:
      gamma: 0.1          # coupling as gamma = alpha^2 / (4 pi); ignored when alpha is set
      alpha: null
      mass: 1.0
      epsilon: null       # null -> eps_cells * grid spacing
      eps_cells: 4.0
      fejer_order: null   # null -> n // 4
      M: 1.0
      n: 64
    run:
      dt: 0.01
      scheme: lie         # lie | strang
      burn_in: null       # null -> 10 / m^2
      n_samples: 1000
      n_chains: null
      spacing: null       # null -> estimated decorrelation spacing
      seed: 0
      workers: 1
    out: runs
"""

from __future__ import annotations

import copy
import hashlib
import json

import yaml

from .errors import ConfigError
from .gff import ModelParams

__all__ = ["DEFAULTS", "load_config", "resolve", "config_hash", "model_params", "dump_yaml"]

DEFAULTS = {
    "model": {
        "gamma": 0.1,
        "alpha": None,
        "mass": 1.0,
        "epsilon": None,
        "eps_cells": 4.0,
        "fejer_order": None,
        "M": 1.0,
        "n": 64,
    },
    "run": {
        "dt": 0.01,
        "scheme": "lie",
        "burn_in": None,
        "n_samples": 1000,
        "n_chains": None,
        "spacing": None,
        "seed": 0,
        "workers": 1,
    },
    "out": "runs",
}

# field -> (type, predicate, message)
_RULES = {
    "model.gamma": (float, lambda v: 0 <= v < 2, "must lie in [0, 2)"),
    "model.alpha": (float, lambda v: v >= 0, "must be >= 0"),
    "model.mass": (float, lambda v: v > 0, "must be positive"),
    "model.epsilon": (float, lambda v: v > 0, "must be positive"),
    "model.eps_cells": (float, lambda v: v >= 2, "must be >= 2 grid cells"),
    "model.fejer_order": (int, lambda v: v >= 1, "must be a positive integer"),
    "model.M": (float, lambda v: v > 0, "must be positive"),
    "model.n": (int, lambda v: v >= 8 and v % 2 == 0, "must be an even integer >= 8"),
    "run.dt": (float, lambda v: v > 0, "must be positive"),
    "run.scheme": (str, lambda v: v in ("lie", "strang"), "must be 'lie' or 'strang'"),
    "run.burn_in": (float, lambda v: v >= 0, "must be >= 0"),
    "run.n_samples": (int, lambda v: v >= 1, "must be a positive integer"),
    "run.n_chains": (int, lambda v: v >= 1, "must be a positive integer"),
    "run.spacing": (float, lambda v: v > 0, "must be positive"),
    "run.seed": (int, lambda v: 0 <= v < 2**64, "must be an unsigned 64-bit integer"),
    "run.workers": (int, lambda v: v >= 1, "must be a positive integer"),
    "out": (str, lambda v: len(v) > 0, "must be a non-empty path"),
}


def _coerce(name, value):
    typ, ok, msg = _RULES[name]
    if value is None:
        if name in ("model.gamma", "run.dt", "run.scheme", "run.n_samples", "run.seed", "run.workers", "out",
                    "model.mass", "model.M", "model.n", "model.eps_cells"):
            raise ConfigError(name, "may not be null")
        return None
    if isinstance(value, bool):
        raise ConfigError(name, f"expected {typ.__name__}, got boolean")
    try:
        if typ is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            v = int(value)
        elif typ is float:
            v = float(value)
        else:
            if not isinstance(value, str):
                raise ValueError
            v = value
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected {typ.__name__}, got {value!r}") from None
    if not ok(v):
        raise ConfigError(name, f"{msg} (got {value!r})")
    return v


def _merge(base, override, prefix=""):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        name = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(name, "unknown field")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(name, "expected a mapping")
            out[k] = _merge(base[k], v, name + ".")
        else:
            out[k] = v
    return out


def resolve(raw=None, overrides=None):
    """Merge ``raw`` and ``overrides`` (dotted keys) onto the defaults and validate."""
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    cfg = _merge(DEFAULTS, raw or {})
    for dotted, v in (overrides or {}).items():
        if v is None:
            continue
        *path, leaf = dotted.split(".")
        node = cfg
        for p in path:
            node = node[p]
        node[leaf] = v
    for name in _RULES:
        *path, leaf = name.split(".")
        node = cfg
        for p in path:
            node = node[p]
        node[leaf] = _coerce(name, node[leaf])
    return cfg


def load_config(path=None, overrides=None):
    raw = None
    if path is not None:
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML: {exc}") from None
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
    return resolve(raw, overrides)


def config_hash(cfg, extra=None):
    blob = json.dumps({"config": cfg, "extra": extra or {}}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def model_params(cfg):
    m = cfg["model"]
    kw = dict(mass=m["mass"], epsilon=m["epsilon"], eps_cells=m["eps_cells"], fejer_order=m["fejer_order"],
              M=m["M"], n=m["n"])
    try:
        p = ModelParams.from_gamma(m["gamma"], **kw)
        if m["alpha"] is not None:
            p = p.with_(alpha=m["alpha"])
    except ValueError as exc:
        msg = str(exc)
        field = "model.epsilon" if "eps" in msg.lower() else "model.fejer_order" if "fejer" in msg.lower() else "model"
        raise ConfigError(field, msg) from None
    return p


def dump_yaml(cfg):
    return yaml.safe_dump(cfg, sort_keys=False)
