"""Flat TOML run configuration covering model and training hyperparameters.

One file configures a whole run; keys map one-to-one onto
:class:`~rawnet.model.RawNetConfig` and :class:`~rawnet.train.TrainConfig`
fields (``seed`` is shared).  ``dump_default_config`` emits every key with
its default so configs are auditable and diffable.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import RawNetConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


_MODEL_KEYS = {f.name for f in fields(RawNetConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def default_config():
    merged = asdict(TrainConfig())
    merged.update(asdict(RawNetConfig()))
    return merged


def load_config(path):
    """Parse a flat TOML file into (RawNetConfig, TrainConfig)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    known = _MODEL_KEYS | _TRAIN_KEYS
    for key in raw:
        if key not in known:
            raise ConfigError(f"{path}: invalid config key {key!r}")
    merged = default_config()
    merged.update(raw)
    return split_config(merged)


def split_config(merged):
    model_cfg = RawNetConfig(**{k: v for k, v in merged.items() if k in _MODEL_KEYS})
    train_cfg = TrainConfig(**{k: v for k, v in merged.items() if k in _TRAIN_KEYS})
    return model_cfg, train_cfg


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def dump_default_config():
    """All keys with defaults, as flat TOML text."""
    lines = ["# rawnet run configuration (all keys shown with their defaults)"]
    merged = default_config()
    for key in sorted(merged):
        lines.append(f"{key} = {_toml_value(merged[key])}")
    return "\n".join(lines) + "\n"
