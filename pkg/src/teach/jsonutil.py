"""Canonical JSON serialization.

One writer for configs, bus payloads, logs, and model artifacts: keys sorted,
no whitespace variation, and a fixed float policy so identical runs produce
byte-identical files. Floats are written either shortest-round-trip ("repr",
lossless, used for model weights) or at 9 significant digits ("g9", used for
telemetry payloads and JSONL logs).
"""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np

__all__ = ["dumps_canonical", "format_float"]


def format_float(x: float, mode: str = "g9") -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"non-finite float not representable in JSON: {x}")
    if mode == "repr":
        out = repr(x)
    elif mode == "g9":
        out = format(x, ".9g")
    else:
        raise ValueError(f"unknown float mode: {mode}")
    # "2.0" and "2e+20" are valid JSON; bare "2." is not produced by either
    # format path. Normalize negative zero for stable golden files.
    if out == "-0.0" or out == "-0":
        out = "0.0"
    return out


_string_cache: dict[str, str] = {}


def _string(s: str) -> str:
    cached = _string_cache.get(s)
    if cached is not None:
        return cached
    # json.dumps only needed when escaping can occur
    if '"' in s or "\\" in s or not s.isprintable():
        out = json.dumps(s, ensure_ascii=False)
    else:
        out = f'"{s}"'
    if len(s) <= 64:
        if len(_string_cache) > 4096:
            _string_cache.clear()
        _string_cache[s] = out
    return out


def _write(obj: Any, parts: list[str], floats: str) -> None:
    if isinstance(obj, np.generic):
        obj = obj.item()
    elif isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, str):
        parts.append(_string(obj))
    elif isinstance(obj, float):
        parts.append(format_float(obj, floats))
    elif isinstance(obj, int):
        parts.append(str(obj))
    elif isinstance(obj, dict):
        parts.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be str, got {type(key).__name__}")
            if i:
                parts.append(",")
            parts.append(_string(key))
            parts.append(":")
            _write(obj[key], parts, floats)
        parts.append("}")
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, item in enumerate(obj):
            if i:
                parts.append(",")
            _write(item, parts, floats)
        parts.append("]")
    else:
        raise TypeError(f"not JSON-serializable: {type(obj).__name__}")


def dumps_canonical(obj: Any, floats: str = "g9") -> str:
    """Serialize with sorted keys and the given float policy."""
    parts: list[str] = []
    _write(obj, parts, floats)
    return "".join(parts)
