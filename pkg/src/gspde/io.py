"""On-disk formats: binary field snapshots, norm CSVs, report tables, atomic writes.

Snapshot layout (little-endian)::

    magic      4 bytes  b"GSPF"
    version    u32
    dim        u32
    cutoff     u32
    mode_count u64
    per mode:  dim x i32 wavevector, dim x (f64 re, f64 im)

Only modes with a non-zero coefficient are written.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from gspde.spectral import FourierField, _wrap, wavevectors

MAGIC = b"GSPF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")


def _row_format(dim: int) -> np.dtype:
    return np.dtype([("k", "<i4", (dim,)), ("v", "<f8", (dim, 2))])


def snapshot_bytes(f: FourierField) -> bytes:
    dim, n = f.dim, f.cutoff
    flat = f.coeffs.reshape(dim, -1)
    nz = np.nonzero(np.any(flat != 0, axis=0))[0]
    rows = np.zeros(nz.size, dtype=_row_format(dim))
    rows["k"] = wavevectors(dim, n).reshape(dim, -1)[:, nz].T
    rows["v"][..., 0] = flat[:, nz].real.T
    rows["v"][..., 1] = flat[:, nz].imag.T
    return _HEADER.pack(MAGIC, VERSION, dim, n, nz.size) + rows.tobytes()


def field_from_bytes(data: bytes) -> FourierField:
    if len(data) < _HEADER.size:
        raise ValueError("truncated snapshot header")
    magic, version, dim, n, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"not a field snapshot (magic {magic!r})")
    if version != VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    if dim not in (2, 3):
        raise ValueError(f"unsupported dimension {dim}")
    fmt = _row_format(dim)
    body = data[_HEADER.size :]
    if len(body) != count * fmt.itemsize:
        raise ValueError(f"snapshot body has {len(body)} bytes, expected {count * fmt.itemsize}")
    rows = np.frombuffer(body, dtype=fmt, count=count)
    arr = np.zeros((dim,) + (2 * n + 1,) * dim, dtype=np.complex128)
    if count:
        ks = rows["k"].astype(np.int64)
        if np.abs(ks).max() > n:
            raise ValueError("snapshot wavevector exceeds its cutoff")
        idx = tuple((ks + n).T)
        vals = rows["v"][..., 0] + 1j * rows["v"][..., 1]
        for c in range(dim):
            arr[(c,) + idx] = vals[:, c]
    return _wrap(dim, n, arr)


def write_snapshot(path: str | Path, f: FourierField) -> None:
    atomic_write_bytes(path, snapshot_bytes(f))


def read_snapshot(path: str | Path) -> FourierField:
    return field_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Text outputs
# ---------------------------------------------------------------------------


def fmt17(x) -> str:
    """Round-trip decimal text for a float (17 significant digits)."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return fmt17(v)
    if isinstance(v, (list, tuple)):
        return " ".join(_cell(x) for x in v)
    return str(v)


def norms_csv(times: np.ndarray, norm_series: np.ndarray) -> str:
    """``t, m0, ..., m_max`` rows; squared Sobolev norms."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"m{m}" for m in range(norm_series.shape[1])])
    for t, row in zip(times, norm_series):
        w.writerow([fmt17(t)] + [fmt17(v) for v in row])
    return buf.getvalue()


def table_csv(cells: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for c in cells:
        w.writerow([_cell(c.get(k, "")) for k in columns])
    return buf.getvalue()


def read_csv_floats(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(-1, len(rows[0]))


# ---------------------------------------------------------------------------
# Atomic writes
# ---------------------------------------------------------------------------


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: str | Path, obj, indent: int | None = 2) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=indent) + "\n")

