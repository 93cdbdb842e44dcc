"""Plain-text weight files: one header line per array, then its row-major values.

::

    W 2 12 68
    0.0123 -0.4 ...
"""

from __future__ import annotations

import numpy as np

__all__ = ["save_weights", "load_weights", "dumps_weights", "loads_weights"]


def dumps_weights(params: dict) -> str:
    lines = []
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=float)
        if any(c.isspace() for c in name):
            raise ValueError(f"parameter name {name!r} contains whitespace")
        lines.append(" ".join([name, str(arr.ndim), *map(str, arr.shape)]))
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    return "\n".join(lines) + "\n"


def loads_weights(text: str) -> dict:
    lines = text.splitlines()
    if len(lines) % 2:
        raise ValueError("weight text has a header without values")
    out = {}
    for head, body in zip(lines[::2], lines[1::2]):
        name, ndim, *dims = head.split()
        shape = tuple(int(d) for d in dims)
        if len(shape) != int(ndim):
            raise ValueError(f"{name}: header declares {ndim} dims, lists {len(shape)}")
        vals = np.array([float(v) for v in body.split()], dtype=float)
        out[name] = vals.reshape(shape)
    return out


def save_weights(params: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_weights(params))


def load_weights(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return loads_weights(fh.read())
