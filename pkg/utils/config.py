"""
Layered run configuration: defaults < KEY=VALUE file < GM_* environment < flags.

Config files use dotenv syntax and are parsed with python-dotenv, so the
same file can double as a `.env` for the shell.
"""

from __future__ import annotations

import os
import typing
from dataclasses import fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Type, TypeVar

from dotenv import dotenv_values

from .errors import ConfigError

ENV_PREFIX = "GM_"
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}
_NONE = {"", "none", "null"}

T = TypeVar("T")


def read_config_file(path: str) -> Dict[str, Optional[str]]:
    """Lower-cased keys of a KEY=VALUE file."""
    target = Path(path)
    if not target.is_file():
        raise ConfigError(f"config file not found: {target}")
    return {key.strip().lower(): value for key, value in dotenv_values(target).items()}


def env_values(keys, environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """`GM_<KEY>` environment overrides for the given field names."""
    source = os.environ if environ is None else environ
    found = {}
    for key in keys:
        name = ENV_PREFIX + key.upper()
        if name in source:
            found[key] = source[name]
    return found


def _unwrap_optional(kind: Any) -> tuple:
    args = typing.get_args(kind)
    if typing.get_origin(kind) is typing.Union and type(None) in args:
        rest = [a for a in args if a is not type(None)]
        return (rest[0] if len(rest) == 1 else str), True
    return kind, False


def coerce(key: str, value: Any, kind: Any) -> Any:
    """Convert a raw (usually string) value to the declared field type."""
    base, optional = _unwrap_optional(kind)
    if isinstance(value, str):
        text = value.strip()
        if optional and text.lower() in _NONE:
            return None
    elif value is None:
        if optional:
            return None
        raise ConfigError(f"{key}: a value is required")
    else:
        text = value
    try:
        if base is bool:
            if isinstance(text, bool):
                return text
            lowered = str(text).lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if base is int:
            if isinstance(text, float) and not text.is_integer():
                raise ValueError(f"not an integer: {text!r}")
            return int(text)
        if base is float:
            return float(text)
        return str(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot use {value!r} ({exc})") from exc


def resolve(
    cls: Type[T],
    *layers: Mapping[str, Any],
    aliases: Optional[Mapping[str, str]] = None,
) -> T:
    """Build `cls` from override layers applied in order; unknown keys are rejected."""
    if not is_dataclass(cls):
        raise TypeError(f"{cls!r} is not a dataclass")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    aliases = aliases or {}
    merged: Dict[str, Any] = {}
    for layer in layers:
        for raw_key, value in layer.items():
            key = aliases.get(raw_key, raw_key)
            if key not in names:
                raise ConfigError(f"unknown configuration key {raw_key!r}")
            merged[key] = coerce(raw_key, value, hints[key])
    return cls(**merged)
