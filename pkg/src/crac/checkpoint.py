"""CRCK named-tensor container.

Layout (little-endian)::

    b"CRCK"  version:u16  count:u32
    count x (name_len:u16, name:utf-8, rank:u8, extents: rank x u32, payload: f32)

Model parameters, Adam moments and scheduler state all live in one
container under prefixed names.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CRCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise CheckpointError("not a CRCK file (bad magic)")
    try:
        version, count = struct.unpack_from("<HI", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported CRCK version {version}")
        off = 10
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(shape))
            if off + 4 * size > len(buf):
                raise CheckpointError(f"truncated payload for {name!r}")
            out[name] = np.frombuffer(buf, "<f4", size, off).reshape(shape).astype(np.float32)
            off += 4 * size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off != len(buf):
        raise CheckpointError("trailing bytes after last entry")
    return out


def save(tensors: dict[str, np.ndarray], path) -> None:
    Path(path).write_bytes(to_bytes(tensors))


def load(path) -> dict[str, np.ndarray]:
    return from_bytes(Path(path).read_bytes())
