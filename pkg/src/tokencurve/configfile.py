"""Flat configuration files: a JSON object or ``key=value`` lines."""
from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path
from typing import Any, TypeVar

from .errors import ConfigError, ParseError

T = TypeVar("T")


def read_mapping(path: str | Path) -> dict[str, Any]:
    """Parse a config file; ``#`` starts a comment in key=value form."""
    text = Path(path).read_text()
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno) from None
        if not isinstance(data, dict):
            raise ParseError("config JSON must be an object", line=1)
        return data
    data = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected key=value", line=lineno)
        k, v = (s.strip() for s in line.split("=", 1))
        data[k] = v
    return data


def _coerce(value: Any, default: Any, key: str, annotation: str) -> Any:
    if value is None:
        return value
    try:
        if default is None:
            if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
                return None
            if "int" in annotation:
                return int(value)
            if "float" in annotation:
                return float(value)
            return value
        if isinstance(default, bool):
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split() if v]
            return tuple(type(default[0])(v) if default else v for v in value)
        return type(default)(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def dataclass_from_mapping(cls: type[T], data: dict[str, Any]) -> T:
    """Build ``cls`` from a mapping, coercing values to the types of its defaults."""
    names = {f.name: str(f.type) for f in fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    defaults = cls()
    kwargs = {k: _coerce(v, getattr(defaults, k), k, names[k]) for k, v in data.items()}
    obj = cls(**kwargs)
    validate = getattr(obj, "validate", None)
    if validate is not None:
        validate()
    return obj
