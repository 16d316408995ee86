"""Comma-separated columnar output with a commented metadata header."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_text(path, text: str):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_table(columns: dict, meta: dict | None = None) -> str:
    """Render equal-length columns; floats use ``repr`` so round trips are exact."""
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    lengths = {a.shape[0] for a in arrays}
    if len(lengths) > 1:
        raise ValueError("columns have different lengths")
    lines = [f"# {k}: {v}" for k, v in (meta or {}).items()]
    lines.append(",".join(names))
    for row in zip(*arrays):
        lines.append(",".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def write_table(path, columns: dict, meta: dict | None = None):
    atomic_write_text(path, format_table(columns, meta))


def read_table(path) -> tuple[dict, dict]:
    """Inverse of :func:`write_table`: (columns, meta)."""
    meta, rows, names = {}, [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            if ":" in line:
                k, v = line[1:].split(":", 1)
                meta[k.strip()] = v.strip()
        elif names is None:
            names = line.split(",")
        elif line.strip():
            rows.append([float(x) for x in line.split(",")])
    data = np.array(rows, dtype=float).reshape(-1, len(names or []))
    return {n: data[:, i] for i, n in enumerate(names or [])}, meta
