"""Layered key-value configuration: INI file sections with environment
variable overrides (PARAFEM_<SECTION>_<KEY>)."""

from __future__ import annotations

import configparser
import os
from dataclasses import fields
from pathlib import Path

from .adapt import AdaptConfig
from .surrogate import TrainConfig

ENV_PREFIX = "PARAFEM"

_ADAPT_KEYS = {
    "etol": float, "tau": float, "t_end": float, "theta_r": float,
    "theta_d": float, "initial_h": float, "generator": str,
    "gmsh_path": str, "baseline_iter_cap": int, "max_nov": int, "seed": int,
}
_SOLVER_KEYS = {"kind": str, "tol": float}
_SURROGATE_KEYS = {
    "adam_lr": float, "loss_target": float, "adam_epoch_cap": int,
    "adam_epoch_cap_warm": int, "lbfgs_history": int, "lbfgs_cap": int,
    "stagnation_rtol": float, "stagnation_window": int, "seed": int,
    "layer_dims": str,
}


def _layered(parser, section, keys):
    out = {}
    if parser is not None and parser.has_section(section):
        for key, cast in keys.items():
            if parser.has_option(section, key):
                out[key] = cast(parser.get(section, key))
    for key, cast in keys.items():
        env = os.environ.get(f"{ENV_PREFIX}_{section.upper()}_{key.upper()}")
        if env is not None:
            out[key] = cast(env)
    return out


def load_config(path=None, **overrides) -> AdaptConfig:
    """Build an AdaptConfig from an optional INI file, the environment, and
    explicit keyword overrides (strongest last)."""
    parser = None
    if path is not None:
        parser = configparser.ConfigParser()
        parser.read_string(Path(path).read_text())

    adapt_kw = _layered(parser, "adapt", _ADAPT_KEYS)
    solver_kw = _layered(parser, "solver", _SOLVER_KEYS)
    surro_kw = _layered(parser, "surrogate", _SURROGATE_KEYS)

    layer_dims = surro_kw.pop("layer_dims", None)
    train_kw = {k: v for k, v in surro_kw.items()
                if k in {f.name for f in fields(TrainConfig)}}
    cfg_kw = dict(adapt_kw)
    if "kind" in solver_kw:
        cfg_kw["solver_kind"] = solver_kw["kind"]
    if "tol" in solver_kw:
        cfg_kw["solver_tol"] = solver_kw["tol"]
    cfg_kw["train"] = TrainConfig(**train_kw)
    if layer_dims:
        cfg_kw["layer_dims"] = tuple(int(d) for d in layer_dims.split(","))
    for key, val in overrides.items():
        if val is not None:
            cfg_kw[key] = val
    return AdaptConfig(**cfg_kw)
