"""Little-endian binary containers for tensors and named-tensor bundles.

Tensor file (``.sntf``)::

    b"SNTF1\\0" | rank:u64 | dims:u64 * rank | payload:f32 * prod(dims)

Named container (``.snpk``), records repeated until EOF::

    b"SNPK1\\0" | { name_len:u64 | name:utf-8 | rank:u64 | dims:u64 * rank | payload:f32 }*

All writers go through a temporary sibling file and ``os.replace`` so a
crashed writer never leaves a half-written file under the final name.
"""

import logging
import os
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from .errors import DataIntegrityError

logger = logging.getLogger(__name__)

TENSOR_MAGIC = b"SNTF1\0"
PACK_MAGIC = b"SNPK1\0"

_U64 = np.dtype("<u8")
_F32 = np.dtype("<f4")


class ByteReader:
    """Cursor over a byte string that raises on truncation."""

    def __init__(self, blob: bytes, source: str) -> None:
        self.blob = blob
        self.pos = 0
        self.source = source

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.blob)

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            msg = f"{self.source}: truncated at byte {self.pos} (needed {n} more)"
            raise DataIntegrityError(msg)
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def magic(self, expected: bytes) -> None:
        found = self.take(len(expected)) if len(self.blob) >= len(expected) else self.blob
        if found != expected:
            msg = f"{self.source}: bad magic {found!r}, expected {expected!r}"
            raise DataIntegrityError(msg)

    def u64(self) -> int:
        return int(np.frombuffer(self.take(8), dtype=_U64)[0])

    def u64s(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype=_U64).astype(np.int64)

    def f32s(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype=_F32).astype(np.float32)

    def shaped(self) -> np.ndarray:
        rank = self.u64()
        dims = tuple(int(d) for d in self.u64s(rank))
        return self.f32s(int(np.prod(dims, dtype=np.int64))).reshape(dims)


def shaped_bytes(array: np.ndarray) -> bytes:
    """``rank | dims | payload`` encoding of one array."""
    arr = np.ascontiguousarray(array, dtype=_F32)
    header = np.array([arr.ndim, *arr.shape], dtype=_U64).tobytes()
    return header + arr.tobytes()


def atomic_write(path: Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _read(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        msg = f"missing file: {path}"
        raise DataIntegrityError(msg) from None


def write_tensor(path: Path, array: np.ndarray) -> None:
    atomic_write(path, TENSOR_MAGIC + shaped_bytes(array))


def read_tensor(path: Path) -> np.ndarray:
    reader = ByteReader(_read(path), str(path))
    reader.magic(TENSOR_MAGIC)
    array = reader.shaped()
    if not reader.exhausted:
        msg = f"{path}: {len(reader.blob) - reader.pos} trailing bytes after tensor payload"
        raise DataIntegrityError(msg)
    return array


def write_pack(path: Path, tensors: Mapping[str, np.ndarray]) -> None:
    parts = [PACK_MAGIC]
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        parts.append(np.array([len(encoded)], dtype=_U64).tobytes())
        parts.append(encoded)
        parts.append(shaped_bytes(array))
    atomic_write(path, b"".join(parts))
    logger.debug("wrote %d tensors to %s", len(tensors), path)


def read_pack(path: Path) -> dict[str, np.ndarray]:
    reader = ByteReader(_read(path), str(path))
    reader.magic(PACK_MAGIC)
    out: dict[str, np.ndarray] = {}
    while not reader.exhausted:
        raw = reader.take(reader.u64())
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError:
            msg = f"{path}: tensor name at byte {reader.pos} is not UTF-8"
            raise DataIntegrityError(msg) from None
        if name in out:
            msg = f"{path}: duplicate tensor name {name!r}"
            raise DataIntegrityError(msg)
        out[name] = reader.shaped()
    return out
