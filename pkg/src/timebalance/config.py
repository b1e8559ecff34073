"""Flat ``key = value`` configuration files.

One file configures one thing: a training stage (:class:`TrainConfig`), the
synthetic corpus (:class:`SynthSpec`) or the inference protocol
(:class:`EvalProtocol`). Blank lines and ``#`` comments are ignored, keys are the
dataclass field names, and every omitted key keeps its default::

    # student run
    stage = train_student
    omega = 1.0
    distill = kl

Unknown keys, duplicate keys, badly typed values and values that violate a
constraint raise :class:`ConfigError` carrying the offending line number.
"""
from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

from .errors import ConfigError
from .evaluation import EvalProtocol
from .synthgen import SynthSpec
from .trainer import TrainConfig

KINDS = {"train": TrainConfig, "synth": SynthSpec, "eval": EvalProtocol}


def _convert(raw: str, typ, key):
    if typ is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if typ is int:
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"{key}: expected an integer, got {raw!r}") from None
    if typ is float:
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"{key}: expected a number, got {raw!r}") from None
    if typ is str:
        if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
            return raw[1:-1]
        return raw
    raise ValueError(f"{key}: unsupported field type {typ}")


def parse_text(text: str, kind: str = "train"):
    cls = KINDS.get(kind)
    if cls is None:
        raise ConfigError(f"unknown config kind {kind!r}; expected one of {sorted(KINDS)}")
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    values, where = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {line.strip()!r}", lineno)
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in names:
            raise ConfigError(f"unknown key {key!r} for {kind} config", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = _convert(raw, hints[key], key)
        except ValueError as exc:
            raise ConfigError(str(exc), lineno) from None
        where[key] = lineno
    try:
        return cls(**values)
    except ValueError as exc:
        # blame the first key that is invalid on its own, else the last key read
        for key in values:
            try:
                cls(**{key: values[key]})
            except ValueError:
                raise ConfigError(str(exc), where[key]) from None
        raise ConfigError(str(exc), max(where.values(), default=None)) from None


def parse_config(path, kind: str = "train"):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from exc
    return parse_text(text, kind)


def dump_config(cfg) -> str:
    """Every field, in declaration order, in the form :func:`parse_text` reads back."""
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def kind_of(cfg) -> str:
    for kind, cls in KINDS.items():
        if isinstance(cfg, cls):
            return kind
    raise TypeError(f"not a config object: {type(cfg).__name__}")
