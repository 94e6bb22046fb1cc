"""Exact JSON serialization for datasets and checkpoints.

Floats are written with 17 significant digits so every float64 round-trips
bit for bit; key order follows insertion order, so a given object always
serializes to the same bytes.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import NumericError

__all__ = ["dump_exact", "load"]


def _emit(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        f = float(obj)
        if not math.isfinite(f):
            raise NumericError("cannot serialize non-finite float")
        out.append(format(f, ".17g"))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), out)
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _emit(item, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(str(key)))
            out.append(":")
            _emit(value, out)
        out.append("}")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dump_exact(obj, path) -> None:
    out: list[str] = []
    _emit(obj, out)
    Path(path).write_text("".join(out) + "\n", encoding="utf-8")


def load(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
