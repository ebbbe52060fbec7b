"""Binary cache dumps and atomic file writes.

Dump layout, little-endian throughout::

    magic "KVD1" | version u16 | l u32 | d u32 | dtype u8 (1=f16, 2=f32) | query_count u32
    K (l*d) | V (l*d) | queries (query_count*d), row-major, in the declared dtype
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .quant1bit import FormatError

MAGIC = b"KVD1"
VERSION = 1
_HEADER = struct.Struct("<4sHIIBI")
HEADER_SIZE = _HEADER.size
DTYPES = {1: "<f2", 2: "<f4"}
DTYPE_CODES = {"f16": 1, "f32": 2}


@dataclass(frozen=True, eq=False)
class CacheDump:
    K: np.ndarray
    V: np.ndarray
    queries: np.ndarray
    dtype: str = "f16"

    @property
    def l(self) -> int:
        return self.K.shape[0]

    @property
    def d(self) -> int:
        return self.K.shape[1]

    def to_bytes(self) -> bytes:
        code = DTYPE_CODES[self.dtype]
        dt = np.dtype(DTYPES[code])
        if self.V.shape != self.K.shape or self.queries.ndim != 2 or self.queries.shape[1] != self.d:
            raise ValueError("K, V and queries have inconsistent shapes")
        parts = [_HEADER.pack(MAGIC, VERSION, self.l, self.d, code, self.queries.shape[0])]
        for arr in (self.K, self.V, self.queries):
            with np.errstate(over="ignore"):
                cast = np.ascontiguousarray(arr, dtype=dt)
            if not np.all(np.isfinite(cast)):
                raise OverflowError(f"values do not fit in {self.dtype}")
            parts.append(cast.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "CacheDump":
        if len(buf) < HEADER_SIZE:
            raise FormatError(f"header truncated: {len(buf)} < {HEADER_SIZE} bytes")
        magic, version, l, d, code, m = _HEADER.unpack_from(buf)
        if magic != MAGIC:
            raise FormatError(f"magic: expected {MAGIC!r}, got {magic!r}")
        if version != VERSION:
            raise FormatError(f"version: unsupported value {version}")
        if l < 1:
            raise FormatError("l: must be >= 1")
        if d < 1:
            raise FormatError("d: must be >= 1")
        if code not in DTYPES:
            raise FormatError(f"dtype: unknown code {code}")
        dt = np.dtype(DTYPES[code])
        expected = HEADER_SIZE + (2 * l * d + m * d) * dt.itemsize
        if len(buf) != expected:
            raise FormatError(f"payload length mismatch: header declares {expected} bytes, file has {len(buf)}")
        flat = np.frombuffer(buf, dtype=dt, offset=HEADER_SIZE).astype(np.float64)
        if not np.all(np.isfinite(flat)):
            raise FormatError("payload: non-finite value")
        K = flat[: l * d].reshape(l, d)
        V = flat[l * d : 2 * l * d].reshape(l, d)
        Q = flat[2 * l * d :].reshape(m, d)
        name = {v: k for k, v in DTYPE_CODES.items()}[code]
        return cls(K, V, Q, name)


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_dump(path) -> CacheDump:
    return CacheDump.from_bytes(Path(path).read_bytes())


def write_dump(path, dump: CacheDump) -> None:
    atomic_write(path, dump.to_bytes())
