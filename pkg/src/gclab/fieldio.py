"""Serialisation: field CSV + JSON header, JSON reports, CSV tables, JSON lines.

All writes go through a temporary file in the target directory followed by
an atomic rename.  Floats are written with ``repr`` so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InputError
from .fieldcalc import Grid2D, ScalarField


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return "" if x is None else str(x)


def jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats to plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def dumps(obj):
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    return atomic_write_text(path, dumps(obj))


def write_jsonl(path, records):
    text = "".join(json.dumps(jsonable(r), sort_keys=True) + "\n" for r in records)
    return atomic_write_text(path, text)


def write_table(path, rows, columns=None):
    """CSV with a header row; missing entries are left empty."""
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return atomic_write_text(path, buf.getvalue())


def header_path(csv_path):
    return Path(csv_path).with_suffix(".json")


def write_field(path, field, name="value", values=None, extra=None):
    """Write ``x1,x2,<name>`` rows plus a JSON header next to the CSV.

    ``values`` may override ``field.values`` (e.g. NaN-masked derived fields).
    """
    grid = field.grid
    v = field.values if values is None else np.asarray(values, dtype=float)
    x = grid.coords
    buf = io.StringIO()
    buf.write(f"x1,x2,{name}\n")
    for i in range(grid.n_cells + 1):
        xi = repr(float(x[i]))
        for j in range(grid.n_cells + 1):
            buf.write(f"{xi},{repr(float(x[j]))},{repr(float(v[i, j]))}\n")
    head = dict(grid.metadata(), columns=["x1", "x2", name], order="x1-major")
    if extra:
        head.update(extra)
    write_json(header_path(path), head)
    return atomic_write_text(path, buf.getvalue())


def read_field(path):
    head = json.loads(header_path(path).read_text())
    grid = Grid2D(head["a"], head["n_cells"])
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != (grid.n_cells + 1) ** 2:
        raise InputError(f"{path}: expected {(grid.n_cells + 1) ** 2} rows, got {data.shape[0]}")
    return ScalarField(grid, data[:, 2].reshape(grid.shape))
