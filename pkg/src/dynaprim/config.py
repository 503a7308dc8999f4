"""Run configuration: JSON file plus overrides, strict keys, provenance echo."""
from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

from .control import ControlConfig
from .errors import ConfigError
from .losses import LossWeights
from .trainer import TrainConfig

# Defaults that come straight from the method description; everything else is ours.
PAPER_DEFAULTS = {
    "train": {"K_init", "iterations_warmup", "iterations_main", "iterations_refine",
              "control_interval", "lr", "refine_lr_scale", "net_depth", "net_width", "k_pos", "k_time"},
    "weights": {"over", "parsi", "vol", "smooth", "trans", "back"},
    "control": {"tau_p", "tau_o", "tau_alpha", "volume_jump", "group_overlap", "group_volume_fraction"},
}
SECTIONS = {"weights": LossWeights, "control": ControlConfig}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - set(SECTIONS)


def _unwrap(v):
    # accept the annotated form written by --print-config
    if isinstance(v, dict) and set(v) == {"value", "provenance"}:
        return v["value"]
    return v


def _check_keys(given: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise ConfigError(f"unknown config key {where}{unknown[0]!r}")


def build_train_config(raw: dict | None = None, **overrides) -> TrainConfig:
    """TrainConfig from a nested dict ({..train keys.., "weights": {...}, "control": {...}})."""
    raw = dict(raw or {})
    _check_keys(raw, TRAIN_KEYS | set(SECTIONS), "")
    kwargs = {k: _unwrap(v) for k, v in raw.items() if k not in SECTIONS}
    for name, cls in SECTIONS.items():
        sec = raw.get(name, {}) or {}
        if not isinstance(sec, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        _check_keys(sec, {f.name for f in fields(cls)}, f"{name}.")
        try:
            kwargs[name] = cls(**{k: _unwrap(v) for k, v in sec.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    for k in ("eps_init", "scale_init"):
        if k in kwargs:
            kwargs[k] = tuple(kwargs[k])
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def annotated(cfg: TrainConfig) -> dict:
    """Every setting as {"value", "provenance"} with provenance 'paper' or 'design'."""
    d = cfg.to_dict()
    out = {}
    for k in sorted(TRAIN_KEYS):
        v = d[k]
        out[k] = {"value": list(v) if isinstance(v, tuple) else v,
                  "provenance": "paper" if k in PAPER_DEFAULTS["train"] else "design"}
    for name in SECTIONS:
        out[name] = {k: {"value": v, "provenance": "paper" if k in PAPER_DEFAULTS[name] else "design"}
                     for k, v in d[name].items()}
    return out
