"""Small CSV helpers shared by the pipelines."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def fmt(v) -> str:
    """Round-trip float formatting so re-runs are byte identical."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_columns(path, header: Sequence[str], columns: Sequence[Iterable]) -> Path:
    path = Path(path)
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("columns must have equal length")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for i in range(n):
            w.writerow([fmt(c[i].item() if hasattr(c[i], "item") else c[i]) for c in cols])
    return path


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def read_csv_columns(path, required: Sequence[str] = ()) -> dict[str, np.ndarray]:
    """Read a headed numeric CSV into float arrays keyed by column name."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    body = [r for r in rows[1:] if r and any(x.strip() for x in r)]
    data = np.array([[float(x) for x in r] for r in body], dtype=float)
    if data.size == 0:
        data = np.empty((0, len(header)))
    return {h: data[:, i] for i, h in enumerate(header)}
