"""Atomic file output and exact-round-trip number formatting."""

import json
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = ["fmt", "atomic_write_text", "write_json", "read_json", "write_csv", "to_jsonable"]


def fmt(value):
    """17 significant digits: parses back to the identical double."""
    return format(float(value), ".17g")


def atomic_write_text(path, text):
    """Writes via a temporary file in the target directory and renames it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if not np.isfinite(value):
            return None if np.isnan(value) else ("inf" if value > 0 else "-inf")
        return value
    return obj


def dumps(obj):
    # repr-based floats in json are the shortest exact round-trip decimal
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    return atomic_write_text(path, dumps(obj))


def read_json(path):
    with open(path) as handle:
        return json.load(handle)


def write_csv(path, header, rows):
    """``rows`` is an iterable of sequences; floats get 17 significant digits."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else fmt(v)) for v in row))
    return atomic_write_text(path, "\n".join(lines) + "\n")
