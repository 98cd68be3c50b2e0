"""Writer for the engine's checkpoint container format.

This is an independent implementation of the byte contract (not shared
code with the engine), so the format is exercised from both sides:

    magic "VITF" | u32 version=1 | u64 metadata length | metadata JSON
    | u32 entry count | per entry: u32 name length, name UTF-8,
      u8 dtype (0=f32, 1=f64, 2=i64), u8 rank, rank x u64 extents,
      raw little-endian row-major element bytes
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"VITF"
VERSION = 1

_DTYPE_CODES = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.int64): 2,
}
_DISK_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8"}


def write_container(path, tensors: dict[str, np.ndarray], metadata: dict) -> None:
    """Serialize named tensors atomically in manifest order."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    blob += struct.pack("<Q", len(meta))
    blob += meta
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        code = _DTYPE_CODES[arr.dtype]
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<BB", code, arr.ndim)
        for extent in arr.shape:
            blob += struct.pack("<Q", extent)
        blob += np.ascontiguousarray(arr, dtype=_DISK_DTYPES[code]).tobytes()

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(blob))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
