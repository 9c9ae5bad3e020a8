"""Flat ``key = value`` run configuration.

One assignment per line, ``#`` starts a comment. Keys come from the model and
training configs plus ``arch``; ``seed`` and ``dropout_p`` feed both. Later
sources override earlier ones (file, then command-line assignments).
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path
from typing import Iterable

from .model import ModelConfig, _parse_field, matched_vanilla_config
from .training import ConfigError, TrainConfig

ARCHS = ("dual", "vanilla")
MODEL_KEYS = tuple(f.name for f in fields(ModelConfig))
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))
KEYS = ("arch",) + MODEL_KEYS + tuple(k for k in TRAIN_KEYS if k not in MODEL_KEYS)


def _assignment(text: str, where: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"{where}: expected key = value, got {text!r}")
    key, val = (s.strip() for s in text.split("=", 1))
    if key not in KEYS:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    return key, val


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            key, val = _assignment(line, f"{source}:{n}")
            out[key] = val
    return out


def read_config(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config_text(text, str(path))


def parse_assignments(items: Iterable[str]) -> dict[str, str]:
    return dict(_assignment(s, "override") for s in items)


def _typed(cls, keys, values):
    defaults = {f.name: f.default for f in fields(cls)}
    kw = {}
    for k in keys:
        if k in values:
            try:
                kw[k] = _parse_field(k, values[k], defaults[k])
            except ValueError as e:
                raise ConfigError(f"{k}: cannot parse {values[k]!r}") from e
    try:
        return cls(**kw)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def resolve(values: dict[str, str]) -> tuple[ModelConfig, TrainConfig, str]:
    """Typed (model, train, arch) from string values; all validation happens here."""
    arch = values.get("arch", "dual")
    if arch not in ARCHS:
        raise ConfigError(f"arch must be one of {ARCHS}, got {arch!r}")
    model = _typed(ModelConfig, MODEL_KEYS, values)
    train = _typed(TrainConfig, TRAIN_KEYS, values)
    if train.dropout_p != model.dropout_p:
        model = _typed(ModelConfig, MODEL_KEYS, {**values, "dropout_p": repr(train.dropout_p)})
    if arch == "vanilla":
        if model.ablate is not None:
            raise ConfigError("ablations apply to the dual architecture only")
        model = matched_vanilla_config(model)
    return model, train, arch


def effective(model: ModelConfig, train: TrainConfig, arch: str) -> dict[str, str]:
    out = {"arch": arch}
    out.update(model.to_strings())
    out.update({f.name: str(getattr(train, f.name)) for f in fields(train)})
    return out


def render(values: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())
