"""Delimited text and JSON persistence with round-trippable floats."""

import csv
import hashlib
import json
from pathlib import Path

import numpy as np


def fmt(x):
    # 17 significant digits round-trip every double exactly
    return format(float(x), ".17g")


def write_table(path, header, rows, comment=None):
    path = Path(path)
    with path.open("w", newline="") as fh:
        if comment is not None:
            fh.write("# " + comment + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_matrix(path, header, cols, comment=None):
    """Write columns of equal length, every value as a 17-digit float."""
    data = np.column_stack([np.asarray(c, dtype=float) for c in cols])
    rows = ([fmt(v) for v in r] for r in data)
    return write_table(path, header, rows, comment)


def read_table(path):
    """Return (comment or None, header, float array)."""
    comment = None
    with Path(path).open() as fh:
        first = fh.readline()
        if first.startswith("# "):
            comment = first[2:].rstrip("\n")
        else:
            fh.seek(0)
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    arr = np.array([[float(v) for v in r] for r in body], dtype=float)
    return comment, header, arr.reshape(len(body), len(header))


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2) + "\n")
    return path


def sha256(path):
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
