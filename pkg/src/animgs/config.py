"""Flat ``key = value`` configuration files and typed overrides."""

from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path

from .errors import ConfigurationError


def parse_config_text(text: str, where: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, ``[section]`` lines are ignored."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{where}:{n}: expected 'key = value', got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{where}:{n}: empty key")
        out[key] = val
    return out


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config_text(text, str(path))


def parse_overrides(items) -> dict:
    """``["a=1", "b = x"]`` -> ``{"a": "1", "b": "x"}``."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, val = (s.strip() for s in item.split("=", 1))
        out[key] = val
    return out


def coerce(key: str, val, typ):
    if not isinstance(val, str):
        if typ is float and isinstance(val, (int, float)) and not isinstance(val, bool):
            return float(val)
        if isinstance(val, typ):
            return val
        raise ConfigurationError(f"config key {key!r}: expected {typ.__name__}, got {val!r}")
    s = val.strip().strip('"').strip("'")
    try:
        if typ is bool:
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if typ is int:
            f = float(s)
            if f != int(f):
                raise ValueError(s)
            return int(f)
        return typ(s)
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: cannot parse {val!r} as {typ.__name__}") from None


def apply_overrides(obj, overrides: dict):
    """Copy of dataclass ``obj`` with ``overrides`` applied; unknown keys are rejected."""
    types = {f.name: type(getattr(obj, f.name)) for f in fields(obj)}
    kw = {}
    for key, val in overrides.items():
        if key not in types:
            raise ConfigurationError(f"unknown config key {key!r}")
        kw[key] = coerce(key, val, types[key])
    return replace(obj, **kw)
