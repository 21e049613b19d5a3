"""Flat ``key = value`` run configuration files.

Keys mirror the dataclass field names; values are parsed as Python literals
when possible (numbers, booleans, lists) and kept as strings otherwise.
"""

from __future__ import annotations

import ast
import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

_BOOL = {"true": True, "false": False, "on": True, "off": False, "yes": True, "no": False}


def parse_value(text: str) -> Any:
    s = text.strip()
    if s.lower() in _BOOL:
        return _BOOL[s.lower()]
    if s.lower() in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(s)
    except (ValueError, SyntaxError):
        return s


def parse_kv(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if not key.replace(".", "_").isidentifier():
            raise ValueError(f"line {lineno}: bad key {key!r}")
        out[key] = parse_value(val)
    return out


def read_kv(path) -> dict[str, Any]:
    return parse_kv(Path(path).read_text())


def dump_kv(mapping: Mapping[str, Any]) -> str:
    lines = []
    for k, v in mapping.items():
        if isinstance(v, tuple):
            v = list(v)
        lines.append(f"{k} = {v!r}" if isinstance(v, str) else f"{k} = {v}")
    return "\n".join(lines) + "\n"


def build(cls, mapping: Mapping[str, Any], *, strict: bool = True):
    """Instantiate dataclass ``cls`` from the keys it knows."""
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in mapping.items():
        key = k.replace(".", "_")
        if key not in names:
            if strict:
                raise ValueError(f"unknown {cls.__name__} key {k!r}")
            continue
        default = names[key].default
        if isinstance(default, tuple) and isinstance(v, list):
            v = tuple(v)
        elif isinstance(default, float) and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        kwargs[key] = v
    return cls(**kwargs)


def snapshot(obj) -> dict[str, Any]:
    d = dataclasses.asdict(obj)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def config_hash(*parts: Any) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
