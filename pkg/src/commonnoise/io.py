"""CSV/JSON helpers with byte-stable float formatting."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    return str(v)


def write_csv(path, header, columns):
    """Write equal-length columns; floats use 17 significant digits."""
    cols = [np.asarray(c) if not isinstance(c, list) else c for c in columns]
    n = len(cols[0]) if cols else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            w.writerow([fmt(c[i]) for c in cols])


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path):
    """Read a numeric CSV into a dict of float arrays keyed by header."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = [row for row in r if row]
    arr = np.array(data, dtype=float).reshape(len(data), len(header))
    return {h: arr[:, i] for i, h in enumerate(header)}


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_default) + "\n", encoding="utf-8")
