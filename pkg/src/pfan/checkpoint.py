"""Binary checkpoint format.

    "PFAN" | version u32 | count u32 |
    per tensor: name_len u32 | utf-8 name | rank u32 | extents u32 * rank | float32 data

All integers and floats are little-endian; data is row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PFAN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(tensors: dict) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def decode(blob: bytes) -> dict:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a PFAN checkpoint (bad magic)")
    pos = 4

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    version, count = read("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (n,) = read("<I")
        name = blob[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = read("<I")
        shape = read(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if shape else 1
        if pos + 4 * size > len(blob):
            raise CheckpointError(f"truncated data for {name}")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * size
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last tensor")
    return tensors


def save(path, tensors: dict) -> None:
    Path(path).write_bytes(encode(tensors))


def load(path) -> dict:
    return decode(Path(path).read_bytes())
