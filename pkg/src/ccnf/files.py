"""Deterministic CSV and JSON files.

CSV: header row, UTF-8, LF line endings, floats written with 17
significant digits so every value round-trips exactly.
"""
from __future__ import annotations

import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import IoFailure


def _atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def format_float(v) -> str:
    return format(float(v), ".17g")


def csv_text(names, data) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(names))
    for row in np.atleast_2d(np.asarray(data, dtype=float)) if len(data) else []:
        w.writerow([format_float(v) for v in row])
    return buf.getvalue()


def write_csv(path, names, data):
    """Write a numeric matrix with a header; ``path='-'`` writes to stdout."""
    text = csv_text(names, data)
    if str(path) == "-":
        sys.stdout.write(text)
    else:
        _atomic_write(path, text)


def read_csv(path):
    """Return ``(names, matrix)`` from a numeric CSV with a header row."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from None
    if not rows:
        raise IoFailure(f"{path} is empty (a header row is required)")
    names = tuple(rows[0])
    body = [r for r in rows[1:] if r]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(names))
    except ValueError:
        raise IoFailure(f"{path} contains non-numeric or ragged rows") from None
    return names, data


def write_json(path, doc):
    _atomic_write(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise IoFailure(f"{path} is not valid JSON: {exc}") from None
