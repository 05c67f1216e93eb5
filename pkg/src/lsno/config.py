"""Flat ``key=value`` text configuration.

Blank lines and lines starting with ``#`` are ignored.  Values are parsed
against the target dataclass field types; tuples are comma separated.
"""

from __future__ import annotations

import dataclasses
import typing

from .errors import ParameterError


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv(pairs: dict[str, str]) -> str:
    return "".join(f"{k}={v}\n" for k, v in pairs.items())


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(raw: str, kind, key: str):
    origin = typing.get_origin(kind)
    try:
        if origin is tuple:
            (item,) = {a for a in typing.get_args(kind) if a is not Ellipsis}
            return tuple(_parse_value(v.strip(), item, key) for v in raw.split(",") if v.strip())
        if kind is bool:
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ParameterError(f"cannot parse {key}={raw!r}") from None


def to_kv(obj) -> dict[str, str]:
    return {f.name: _format_value(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def from_kv(cls, pairs: dict[str, str], base=None):
    """Build ``cls`` from string pairs, starting from ``base`` (or defaults)."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(pairs) - names
    if unknown:
        raise ParameterError(f"unknown configuration keys: {sorted(unknown)}")
    values = {k: _parse_value(v, hints[k], k) for k, v in pairs.items()}
    if base is None:
        return cls(**values)
    return dataclasses.replace(base, **values)
