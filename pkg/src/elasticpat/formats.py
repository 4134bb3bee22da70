"""Binary field/trace files and CSV helpers.

EWF1  field file: b"EWF1", u8 ndim, ndim × u32 LE axis lengths, float64 LE
      data in C order. Vector fields are stored with the component axis
      first, shape (dim, *grid.n).
EWS1  state snapshot: 16-byte header (b"EWS1", 4 zero bytes, float64 LE time)
      followed by the EWF1 blocks of u and u_t.
EBT1  boundary trace: b"EBT1", float64 sample interval, u32 sample count,
      u32 surface count, u8 dim, surface coordinates (count × dim float64),
      then the values (samples × count × dim float64), time-major.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError

__all__ = [
    "write_ewf",
    "read_ewf",
    "write_state",
    "read_state",
    "write_trace",
    "read_trace",
    "write_csv",
    "fmt",
    "sha256",
]

EWF_MAGIC = b"EWF1"
EWS_MAGIC = b"EWS1"
EBT_MAGIC = b"EBT1"


def fmt(v) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    return str(v)


def _ewf_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = EWF_MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def _ewf_parse(buf: memoryview, pos: int = 0):
    if bytes(buf[pos : pos + 4]) != EWF_MAGIC:
        raise ValueError("not an EWF1 block")
    (ndim,) = struct.unpack_from("<B", buf, pos + 4)
    shape = struct.unpack_from(f"<{ndim}I", buf, pos + 5)
    start = pos + 5 + 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    end = start + 8 * count
    if end > len(buf):
        raise ValueError("truncated EWF1 block")
    arr = np.frombuffer(buf[start:end], dtype="<f8").reshape(shape).astype(float)
    return arr, end


def write_ewf(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(_ewf_bytes(arr))


def read_ewf(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}", key="path") from exc
    arr, _ = _ewf_parse(memoryview(raw))
    return arr


def write_state(path, u: np.ndarray, ut: np.ndarray, time: float) -> None:
    head = EWS_MAGIC + b"\0" * 4 + struct.pack("<d", float(time))
    Path(path).write_bytes(head + _ewf_bytes(u) + _ewf_bytes(ut))


def read_state(path):
    """Returns ``(u, ut, time)`` as arrays and a float."""
    buf = memoryview(Path(path).read_bytes())
    if bytes(buf[:4]) != EWS_MAGIC:
        raise ValueError("not an EWS1 snapshot")
    (time,) = struct.unpack_from("<d", buf, 8)
    u, pos = _ewf_parse(buf, 16)
    ut, _ = _ewf_parse(buf, pos)
    return u, ut, time


def write_trace(path, sample_dt: float, points: np.ndarray, values: np.ndarray) -> None:
    ns, npts, dim = values.shape
    if points.shape != (npts, dim):
        raise ValueError("points and values disagree on the surface size")
    out = io.BytesIO()
    out.write(EBT_MAGIC)
    out.write(struct.pack("<dIIB", float(sample_dt), ns, npts, dim))
    out.write(np.ascontiguousarray(points, dtype="<f8").tobytes())
    out.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
    Path(path).write_bytes(out.getvalue())


def read_trace(path):
    """Returns ``(sample_dt, points (|𝒮|, d), values (samples, |𝒮|, d))``."""
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise ConfigError(f"trace file not found: {path}", key="trace") from exc
    if raw[:4] != EBT_MAGIC:
        raise ConfigError(f"{path} is not an EBT1 trace file", key="trace")
    sample_dt, ns, npts, dim = struct.unpack_from("<dIIB", raw, 4)
    pos = 4 + struct.calcsize("<dIIB")
    pts = np.frombuffer(raw, dtype="<f8", count=npts * dim, offset=pos).reshape(npts, dim)
    pos += 8 * npts * dim
    vals = np.frombuffer(raw, dtype="<f8", count=ns * npts * dim, offset=pos).reshape(ns, npts, dim)
    return sample_dt, pts.astype(float), vals.astype(float)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
