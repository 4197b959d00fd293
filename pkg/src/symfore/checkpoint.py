"""Single-file container for named float64 arrays plus JSON metadata.

Byte layout::

    8 bytes   magic b"SYMFORE\\0"
    4 bytes   format version, uint32 little-endian
    8 bytes   header length N, uint64 little-endian
    N bytes   UTF-8 JSON header {"arrays": [{"name", "shape", "offset"}], "meta": {...}}
    ...       array payloads, little-endian float64, row-major, in index order

``offset`` counts bytes from the start of the payload section.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SYMFORE\x00"
VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable or incompatible checkpoint."""


def save_checkpoint(path: str | os.PathLike, arrays: dict[str, np.ndarray], meta: dict) -> None:
    index, blobs, offset = [], [], 0
    for name in arrays:
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"arrays": index, "meta": meta}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    payload = memoryview(raw)[20 + hlen:]
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return arrays, header["meta"]


def file_hash(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
