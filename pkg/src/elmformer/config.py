"""Flat ``key = value`` config text and typed coercion into dataclasses."""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path


class ConfigFileError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    """One ``key = value`` per line; ``#`` starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{source}:{n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigFileError(f"{source}:{n}: empty key")
        if key in out:
            raise ConfigFileError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(), str(path))


def format_kv(values: dict) -> str:
    lines = []
    for k, v in values.items():
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        elif v is None:
            v = ""
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def _coerce(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if raw == "" or raw.lower() == "none":
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(raw, inner, key)
    if origin in (list, tuple):
        if raw == "":
            return []
        return [_coerce(p.strip(), args[0], key) for p in raw.split(",")]
    try:
        if tp is bool:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
    except ValueError:
        raise ConfigFileError(f"{key}: cannot read {raw!r} as {tp.__name__}") from None
    return raw


def from_kv(cls, values: dict[str, str], strict: bool = True):
    """Build dataclass ``cls`` from string values; unknown keys are errors when strict."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if strict and unknown:
        raise ConfigFileError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {k: _coerce(v, hints[k], k) for k, v in values.items() if k in names}
    return cls(**kwargs)


def to_kv(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def split_known(cls, values: dict[str, str]) -> tuple[dict[str, str], dict[str, str]]:
    names = {f.name for f in dataclasses.fields(cls)}
    return ({k: v for k, v in values.items() if k in names},
            {k: v for k, v in values.items() if k not in names})
