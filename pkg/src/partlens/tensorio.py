"""Binary dump format for named float64 arrays (checkpoints, map exports).

Layout, all little-endian: magic ``RGT1``, u32 entry count, then per entry a
u16 name length, the UTF-8 name, a u8 rank, one u32 extent per dimension and
the 64-bit IEEE values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RGT1"


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write a name -> array mapping, preserving insertion order."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", len(tensors))
    for name, values in tensors.items():
        arr = np.ascontiguousarray(values, dtype="<f8")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ValueError(f"tensor rank {arr.ndim} exceeds format limit")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def read_tensors(path) -> dict[str, np.ndarray]:
    """Read a dump written by :func:`write_tensors`."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a tensor dump (bad magic {blob[:4]!r})")
    (count,) = struct.unpack_from("<I", blob, 4)
    offset = 8
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        values = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
        offset += 8 * size
        tensors[name] = values.reshape(shape).astype(np.float64)
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")
    return tensors
