"""Canonical JSON emission for reports.

Reports must be byte-reproducible: fields keep insertion order, floats are
written with 17 significant digits ('%.17g', enough to round-trip a double),
and non-finite values are replaced by null with their paths recorded in a
top-level "warnings" list.
"""

from __future__ import annotations

import math

import numpy as np


def sanitize(obj):
    """Convert to plain JSON types; non-finite floats become None + warning."""
    warnings: list[str] = []
    return _leaf(obj, "$", warnings), warnings


def _leaf(obj, path: str, warnings: list):
    if isinstance(obj, dict):
        return {str(k): _leaf(v, f"{path}.{k}", warnings) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_leaf(v, f"{path}[{i}]", warnings) for i, v in enumerate(obj)]
    if isinstance(obj, np.ndarray):
        return [_leaf(v, f"{path}[{i}]", warnings) for i, v in enumerate(obj.tolist())]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if not math.isfinite(f):
            warnings.append(f"non-finite value at {path} serialized as null")
            return None
        return f
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__} at {path}")


def _write(value, out: list):
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(format(value, ".17g"))
    elif isinstance(value, str):
        out.append('"' + value.replace("\\", "\\\\").replace('"', '\\"')
                   .replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t") + '"')
    elif isinstance(value, list):
        out.append("[")
        for i, v in enumerate(value):
            if i:
                out.append(", ")
            _write(v, out)
        out.append("]")
    elif isinstance(value, dict):
        out.append("{")
        for i, (k, v) in enumerate(value.items()):
            if i:
                out.append(", ")
            _write(str(k), out)
            out.append(": ")
            _write(v, out)
        out.append("}")
    else:  # pragma: no cover - sanitize() rules this out
        raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(report: dict) -> str:
    """Serialize a report canonically; appends collected warnings in-place."""
    clean, warnings = sanitize(report)
    if warnings:
        existing = clean.get("warnings", [])
        clean["warnings"] = list(existing) + warnings
    out: list[str] = []
    _write(clean, out)
    return "".join(out) + "\n"
