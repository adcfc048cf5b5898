"""Solution files: flat little-endian float64 array plus a JSON header."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .model import ZERO_EXTERIOR, ExteriorData, GridFunction


def dump_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def save_solution(stem, u: GridFunction, meta: Optional[dict] = None) -> tuple:
    """Write ``stem.bin`` and ``stem.json``; returns both paths."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    binp, hdrp = stem.with_suffix(".bin"), stem.with_suffix(".json")
    np.ascontiguousarray(u.values, dtype="<f8").tofile(binp)
    header = {
        "halfwidth": u.halfwidth, "n": u.n, "dim": u.dim, "dtype": "<f8",
        "shape": list(np.shape(u.values)), "exterior": u.exterior.name,
    }
    header.update(meta or {})
    dump_json(header, hdrp)
    return binp, hdrp


def load_solution(stem, exterior: Optional[ExteriorData] = None) -> tuple:
    """Read a pair written by :func:`save_solution`; returns ``(GridFunction, header)``."""
    stem = Path(stem)
    with open(stem.with_suffix(".json")) as fh:
        header = json.load(fh)
    vals = np.fromfile(stem.with_suffix(".bin"), dtype=header["dtype"]).reshape(header["shape"])
    u = GridFunction(float(header["halfwidth"]), int(header["n"]), vals, exterior or ZERO_EXTERIOR)
    return u, header
