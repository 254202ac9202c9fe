"""Flat INI configuration files mapped onto :class:`TrainConfig`.

Example::

    [model]
    variant = adder
    depth = 8

    [train]
    epochs = 20
    seed = 3
"""
from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .errors import ConfigurationError
from .training import TrainConfig

SECTIONS = {
    "model": ("variant", "depth", "width", "shortcut", "power", "shortcut_gamma", "scale"),
    "train": ("lr_conv", "lr_adder", "beta1", "beta2", "eps", "batch_size", "epochs", "seed",
              "loss", "grad_clip", "adaptive_lr", "lr_decay_every", "lr_decay_factor"),
    "data": ("patch_size", "stride", "augment", "train_images", "val_images", "image_size",
             "data_dir", "val_dir"),
    "output": ("output_dir",),
}

_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _convert(key: str, raw: str):
    kind = str(_TYPES[key])
    value = raw.strip()
    if "None" in kind and value.lower() in ("", "none"):
        return None
    try:
        if kind.startswith("bool"):
            if value.lower() in ("1", "yes", "true", "on"):
                return True
            if value.lower() in ("0", "no", "false", "off"):
                return False
            raise ValueError(value)
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from None
    return value


def parse_config(text: str) -> TrainConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(str(exc)) from None
    values = {}
    for section in cp.sections():
        allowed = SECTIONS.get(section)
        if allowed is None:
            raise ConfigurationError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in allowed:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]")
            values[key] = _convert(key, raw)
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            v = getattr(cfg, key)
            lines.append(f"{key} = {'none' if v is None else v}")
        lines.append("")
    return "\n".join(lines)
