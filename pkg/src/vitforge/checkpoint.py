"""Bit-exact binary container for named tensors.

Layout (all integers little-endian):

    magic `VITF` (4 bytes)
    u32 version (= 1)
    u64 metadata length, then that many bytes of metadata JSON (UTF-8)
    u32 entry count
    per entry:
        u32 name length, name UTF-8
        u8 dtype code (0 = float32, 1 = float64, 2 = int64)
        u8 rank, then rank x u64 extents
        raw element bytes, row-major, little-endian

Writes are atomic (temp file + rename), so a crashed save never leaves a
truncated file at the target path.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import (
    ContractError,
    CorruptionError,
    FormatError,
    ManifestError,
    VersionError,
)

MAGIC = b"VITF"
VERSION = 1

_CODE_TO_DTYPE = {0: "<f4", 1: "<f8", 2: "<i8"}
_KIND_TO_CODE = {("f", 4): 0, ("f", 8): 1, ("i", 8): 2}
_NATIVE = {0: np.float32, 1: np.float64, 2: np.int64}


def _dtype_code(arr: np.ndarray, name: str) -> int:
    key = (arr.dtype.kind, arr.dtype.itemsize)
    if key not in _KIND_TO_CODE:
        raise ContractError(
            f"tensor {name!r} has unsupported dtype {arr.dtype}; "
            "supported: float32, float64, int64"
        )
    return _KIND_TO_CODE[key]


def save(path, tensors, metadata: dict | None = None) -> None:
    """Atomically write named tensors plus a JSON metadata block.

    `tensors` is a mapping or an iterable of (name, array) pairs; names must
    be unique and nonempty. Everything is validated before any byte is
    written.
    """
    pairs = list(tensors.items()) if hasattr(tensors, "items") else list(tensors)
    seen: set[str] = set()
    for name, _ in pairs:
        if not name:
            raise ContractError("tensor names must be nonempty")
        if name in seen:
            raise ContractError(f"duplicate tensor name {name!r}")
        seen.add(name)

    chunks = [MAGIC, struct.pack("<I", VERSION)]
    meta_bytes = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<Q", len(meta_bytes)))
    chunks.append(meta_bytes)
    chunks.append(struct.pack("<I", len(pairs)))
    for name, arr in pairs:
        arr = np.asarray(arr)
        code = _dtype_code(arr, name)
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_CODE_TO_DTYPE[code]).tobytes())

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            for c in chunks:
                fh.write(c)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes, context: str):
        self.buf = buf
        self.off = 0
        self.context = context

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise CorruptionError(
                f"{self.context}: file truncated while reading {what} "
                f"(need {n} bytes at offset {self.off}, have {len(self.buf) - self.off})"
            )
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read and fully validate a container; returns (tensors, metadata)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf, str(path))
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise VersionError(f"{path}: unsupported container version {version}")
    meta_len = r.u64("metadata length")
    meta_bytes = r.take(meta_len, "metadata")
    try:
        metadata = json.loads(meta_bytes.decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: metadata block is not valid JSON: {exc}")

    count = r.u32("entry count")
    tensors: dict[str, np.ndarray] = {}
    for k in range(count):
        label = f"entry {k}"
        name_len = r.u32(f"{label} name length")
        name = r.take(name_len, f"{label} name").decode("utf-8")
        label = f"entry {k} ({name!r})"
        code = r.u8(f"{label} dtype")
        if code not in _CODE_TO_DTYPE:
            raise CorruptionError(f"{path}: {label} has unknown dtype code {code}")
        rank = r.u8(f"{label} rank")
        shape = tuple(r.u64(f"{label} extent {i}") for i in range(rank))
        disk_dtype = np.dtype(_CODE_TO_DTYPE[code])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * disk_dtype.itemsize
        raw = r.take(n_bytes, f"{label} data")
        if name in tensors:
            raise CorruptionError(f"{path}: duplicate tensor name {name!r}")
        arr = np.frombuffer(raw, dtype=disk_dtype).reshape(shape)
        tensors[name] = arr.astype(_NATIVE[code])
    if r.off != len(buf):
        raise CorruptionError(
            f"{path}: {len(buf) - r.off} trailing bytes after the last entry"
        )
    return tensors, metadata


def validate_against_config(tensors, cfg, allow_head_mismatch: bool = False) -> None:
    """Check that named tensors exactly match the model manifest for `cfg`.

    All offenders (missing, extra, mis-shaped) are reported in one error.
    With `allow_head_mismatch`, `head.*` entries are exempt from both shape
    and presence checks (the fine-tuning import path).
    """
    from .model import manifest_shapes

    expected = manifest_shapes(cfg)
    is_head = lambda name: name in ("head.weight", "head.bias")
    problems = []
    for name, shape in expected.items():
        if allow_head_mismatch and is_head(name):
            continue
        if name not in tensors:
            problems.append(f"missing tensor {name!r} (expected shape {shape})")
        elif tuple(tensors[name].shape) != shape:
            problems.append(
                f"tensor {name!r} has shape {tuple(tensors[name].shape)}, expected {shape}"
            )
    for name in tensors:
        if name not in expected and not (allow_head_mismatch and is_head(name)):
            problems.append(f"unexpected tensor {name!r}")
    if problems:
        raise ManifestError(
            f"checkpoint does not match config ({len(problems)} problem(s)):\n  "
            + "\n  ".join(sorted(problems))
        )
