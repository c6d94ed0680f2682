"""Canonical JSON with 17-significant-digit floats.

``json.dumps`` writes the shortest round-trip repr of a float, which is
also exact, but the file formats here pin the digits explicitly so that
artifacts are byte-stable across Python versions.
"""

import hashlib
import json
import math

import numpy as np

__all__ = ["dumps", "loads", "sha256_of"]


def _fmt_float(x):
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite float {x!r}")
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def _encode(obj, out, sort_keys):
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _encode(obj.tolist(), out, sort_keys)
    elif isinstance(obj, dict):
        keys = sorted(obj) if sort_keys else list(obj)
        out.append("{")
        for n, k in enumerate(keys):
            if n:
                out.append(",")
            out.append(json.dumps(str(k)))
            out.append(":")
            _encode(obj[k], out, sort_keys)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for n, item in enumerate(obj):
            if n:
                out.append(",")
            _encode(item, out, sort_keys)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, sort_keys=True) -> str:
    out = []
    _encode(obj, out, sort_keys)
    return "".join(out)


def loads(text):
    return json.loads(text)


def sha256_of(obj) -> str:
    return hashlib.sha256(dumps(obj).encode("utf-8")).hexdigest()
