"""Deterministic on-disk formats: matrices, CSV tables, JSON reports.

All writers aim for byte-stable output given identical inputs: floats are
printed with round-trip precision, dict keys are sorted, and no
timestamps enter the payloads.
"""

import csv
import hashlib
import io as _io
import json
from pathlib import Path

import numpy as np

MATRIX_MAGIC = "gfamp-matrix v1"


def content_digest(arr: np.ndarray) -> str:
    """sha256 over dtype, shape and raw little-endian bytes of an array."""
    a = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(str(a.dtype.str).encode())
    h.update(str(a.shape).encode())
    h.update(a.tobytes())
    return h.hexdigest()


def save_matrix(path, matrix: np.ndarray, layout: str = "symbol-major",
                seeds: dict | None = None, meta: dict | None = None) -> None:
    """Write a complex matrix as text: header comments, then re/im pairs per row."""
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    buf = _io.StringIO()
    buf.write(f"# {MATRIX_MAGIC}\n")
    buf.write("# dtype: complex128\n")
    buf.write(f"# shape: {m.shape[0]} {m.shape[1]}\n")
    buf.write(f"# layout: {layout}\n")
    if seeds:
        buf.write(f"# seeds: {json.dumps(seeds, sort_keys=True)}\n")
    if meta:
        buf.write(f"# meta: {json.dumps(meta, sort_keys=True)}\n")
    # interleave re/im per column
    inter = np.empty((m.shape[0], 2 * m.shape[1]))
    inter[:, 0::2] = m.real
    inter[:, 1::2] = m.imag
    np.savetxt(buf, inter, fmt="%.17g")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def load_matrix(path) -> tuple[np.ndarray, dict]:
    """Read a matrix written by save_matrix; returns (matrix, header dict)."""
    text = Path(path).read_text()
    header = {}
    lines = text.splitlines()
    if not lines or lines[0] != f"# {MATRIX_MAGIC}":
        raise ValueError(f"{path}: not a {MATRIX_MAGIC} file")
    for line in lines[1:]:
        if not line.startswith("# "):
            break
        key, _, value = line[2:].partition(": ")
        header[key] = value
    data = np.loadtxt(_io.StringIO(text), comments="#", ndmin=2)
    rows, cols = (int(v) for v in header["shape"].split())
    if data.shape != (rows, 2 * cols):
        raise ValueError(f"{path}: data shape {data.shape} does not match header")
    matrix = data[:, 0::2] + 1j * data[:, 1::2]
    for key in ("seeds", "meta"):
        if key in header:
            header[key] = json.loads(header[key])
    return matrix, header


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def write_csv(path, rows: list, fieldnames: list) -> None:
    """Plain CSV with a fixed column order and round-trip float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="raise")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def default(v):
        if isinstance(v, (np.integer,)):
            return int(v)
        if isinstance(v, (np.floating,)):
            return float(v)
        if isinstance(v, np.ndarray):
            return v.tolist()
        raise TypeError(f"not JSON-serializable: {type(v)}")

    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n")
