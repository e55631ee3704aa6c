"""Canonical JSON serialization for dump and report files.

The stdlib encoder offers no control over float formatting, so this module
renders JSON itself: dict keys keep insertion order (callers build records in
the documented key order) and floats are written with 6 significant digits.
Output is deterministic byte-for-byte for equal inputs.
"""

from __future__ import annotations

import json
import math
from typing import Any


def format_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite float {x!r} cannot be serialized")
    return format(x, ".6g")


def quantize(x: float) -> float:
    """The value a float becomes after one emit/parse round-trip."""
    return float(format_float(x))


def canonical_json(value: Any, indent: int | None = None) -> str:
    """Render ``value`` as canonical JSON text (no trailing newline)."""
    out: list[str] = []
    _write(value, out, indent, 0)
    return "".join(out)


def _write(value: Any, out: list[str], indent: int | None, depth: int) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(format_float(value))
    elif isinstance(value, dict):
        _write_items(
            out, indent, depth, "{", "}",
            [(json.dumps(str(k), ensure_ascii=False) + (": " if indent else ":"), v) for k, v in value.items()],
        )
    elif isinstance(value, (list, tuple)):
        _write_items(out, indent, depth, "[", "]", [("", v) for v in value])
    else:
        raise TypeError(f"cannot canonically serialize {type(value).__name__}")


def _write_items(out, indent, depth, open_ch, close_ch, items) -> None:
    if not items:
        out.append(open_ch + close_ch)
        return
    out.append(open_ch)
    pad = "" if indent is None else "\n" + " " * (indent * (depth + 1))
    for i, (prefix, v) in enumerate(items):
        if i:
            out.append(",")
        out.append(pad)
        out.append(prefix)
        _write(v, out, indent, depth + 1)
    if indent is not None:
        out.append("\n" + " " * (indent * depth))
    out.append(close_ch)
