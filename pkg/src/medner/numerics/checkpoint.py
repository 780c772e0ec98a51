"""Self-describing checkpoint container.

Byte layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"MNERCKPT"
    8       4     format version (uint32, currently 1)
    12      8     header length H in bytes (uint64)
    20      H     UTF-8 JSON header
    20+H    ...   tensor payload

The JSON header holds ``config`` (free-form), ``seed`` (int), ``meta``
(free-form, e.g. vocabularies) and ``tensors``: a list of
``{"name", "dtype", "shape", "offset", "nbytes"}`` records where ``dtype`` is
``"<f8"``, ``"<f4"`` or ``"<i8"`` and ``offset`` is relative to the start of
the payload.  Tensors are stored C-contiguous and sorted by name, so equal
inputs give identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MNERCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict | None = None,
                    seed: int | None = None, meta: dict | None = None) -> None:
    records = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype == np.float32:
            dtype = "<f4"
        elif np.issubdtype(arr.dtype, np.integer):
            dtype = "<i8"
        else:
            dtype = "<f8"
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        records.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config or {}, "seed": seed, "meta": meta or {}, "tensors": records},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        f.write(header)
        for raw in chunks:
            f.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns ``(tensors, header)``; ``header`` has ``config``, ``seed`` and ``meta``."""
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size
    header = json.loads(blob[start:start + hlen].decode("utf-8"))
    payload = memoryview(blob)[start + hlen:]
    tensors = {}
    for rec in header["tensors"]:
        lo, hi = rec["offset"], rec["offset"] + rec["nbytes"]
        if hi > len(payload):
            raise CheckpointError(f"{path}: tensor {rec['name']} runs past end of file")
        arr = np.frombuffer(payload[lo:hi], dtype=rec["dtype"]).reshape(rec["shape"])
        tensors[rec["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return tensors, {k: header[k] for k in ("config", "seed", "meta")}
