"""Flat `section.key = value` config text <-> nested TrainConfig dataclasses."""
from __future__ import annotations

import dataclasses
import hashlib
import typing

from .trainer import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(key)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.message = message
        self.key = key
        self.line = line


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_flat(cfg, prefix: str = "") -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        if f.name == "velocity":
            continue
        value = getattr(cfg, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(to_flat(value, key + "."))
        else:
            out[key] = value
    return out


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in to_flat(cfg).items())


def config_hash(cfg: TrainConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]


def _coerce(text: str, default, key):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as {type(default).__name__}", key) from None
    return text


def _build(cls, values: dict, prefix: str):
    kwargs = {}
    hints = typing.get_type_hints(cls)
    defaults = cls()
    for f in dataclasses.fields(cls):
        if f.name == "velocity":
            continue
        key = f"{prefix}{f.name}"
        default = getattr(defaults, f.name)
        if dataclasses.is_dataclass(default):
            kwargs[f.name] = _build(hints[f.name], values, key + ".")
        elif key in values:
            raw = values.pop(key)
            kwargs[f.name] = _coerce(raw, default, key) if isinstance(raw, str) else raw
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), prefix.rstrip(".") or "config") from None


def from_flat(values: dict) -> TrainConfig:
    """Build a validated TrainConfig from flat keys; unknown keys are errors."""
    values = dict(values)
    cfg = _build(TrainConfig, values, "")
    if values:
        first = sorted(values)[0]
        raise ConfigError("unknown key", first)
    return cfg


def parse_config(text: str) -> TrainConfig:
    values, lines = {}, {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=i)
        key, value = (t.strip() for t in line.split("=", 1))
        if key in values:
            raise ConfigError("duplicate key", key, line=i)
        values[key] = value
        lines[key] = i
    try:
        return from_flat(values)
    except ConfigError as exc:
        key = exc.key
        if key not in lines:
            # section-level validation: find the offending field by name
            named = [k for k in lines if k.startswith(f"{key}.") and k.rsplit(".", 1)[-1] in exc.message]
            key = named[0] if named else key
        if key in lines:
            raise ConfigError(exc.message, key, lines[key]) from None
        raise


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def override(cfg: TrainConfig, **flat) -> TrainConfig:
    """Copy of `cfg` with some flat keys replaced, e.g. override(cfg, **{"optim.lr": 0.01})."""
    values = to_flat(cfg)
    for k, v in flat.items():
        if k not in values:
            raise ConfigError("unknown key", k)
        values[k] = v
    return from_flat(values)


ABLATIONS = ("no-birth", "no-death", "no-birth-death")


def apply_ablation(cfg: TrainConfig, ablation: str | None) -> TrainConfig:
    """Empty the birth and/or death phase; nothing else changes."""
    if ablation is None:
        return cfg
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; choose from {', '.join(ABLATIONS)}")
    ctl = cfg.controller
    flat = {}
    if ablation in ("no-birth", "no-birth-death"):
        flat["controller.birth_end"] = ctl.birth_start
    if ablation in ("no-death", "no-birth-death"):
        flat["controller.death_end"] = ctl.death_start
    return override(cfg, **flat)
