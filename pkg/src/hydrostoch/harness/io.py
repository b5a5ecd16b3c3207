"""Result files: NDJSON streams, summary JSON and raw field snapshots.

Snapshot layout (little endian)::

    b"HSTO1"            5 bytes
    uint32 ndim
    uint64 dims[ndim]
    float64 data[prod(dims)]   row-major
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HSTO1"


def _clean(obj):
    # JSON has no NaN/inf; spell them as strings so lines stay strict JSON
    if isinstance(obj, float):
        if obj != obj:
            return "nan"
        if obj in (float("inf"), float("-inf")):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), allow_nan=False)


def write_ndjson(path, objs):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for obj in objs:
            fh.write(dumps(obj) + "\n")


def read_ndjson(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_snapshot(path, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_snapshot(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(5) != MAGIC:
            raise ValueError(f"{path} is not an HSTO1 snapshot")
        (ndim,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != int(np.prod(dims)):
        raise ValueError(f"{path}: truncated snapshot")
    return data.reshape(dims).astype(float)
