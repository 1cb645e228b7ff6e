"""Plain-data conversion and deterministic output formats shared by reports and the CLI."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math

import numpy as np


def fmt_float(v) -> str:
    """17 significant digits, the shortest width that round-trips every double."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def jsonable(obj):
    """Recursively turn dataclasses, numpy scalars and arrays into JSON-ready values."""
    from .domain import GridFunction, Params

    if isinstance(obj, GridFunction):
        return {"grid_id": obj.grid_id, "far_value": obj.far_value, "values": jsonable(obj.values)}
    if isinstance(obj, Params):
        return obj.to_dict()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # JSON has no nan/inf; keep them as strings rather than emit invalid JSON
        return v if math.isfinite(v) else fmt_float(v)
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def write_csv(path, header, rows):
    """Comma-separated, header row, LF endings; floats with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
