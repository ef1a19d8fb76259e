"""Binary array files and atomic writes.

Layout: magic ``RFL1``, ``u32`` rank, ``rank`` × ``u64`` dims, then the
float64 little-endian payload in C order.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"RFL1"


class FormatError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_array(a) -> bytes:
    a = np.asarray(a, dtype="<f8", order="C")
    head = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes()


def decode_array(buf: bytes):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError("not an RFL1 array file")
    (rank,) = struct.unpack_from("<I", buf, 4)
    off = 8 + 8 * rank
    if len(buf) < off:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{rank}Q", buf, 8)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) != off + 8 * count:
        raise FormatError(f"payload has {len(buf) - off} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8", offset=off, count=count).reshape(dims).copy()


def save_array(path, a):
    atomic_write_bytes(path, encode_array(a))


def load_array(path):
    with open(path, "rb") as fh:
        return decode_array(fh.read())


def write_csv(path, rows, fieldnames=None):
    rows = list(rows)
    fieldnames = fieldnames or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")
