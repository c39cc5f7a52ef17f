"""Checkpoint container for named parameter arrays.

Layout: magic bytes "MTMF", version u32 little-endian, then one record
per parameter until EOF: name length (u32) + UTF-8 name, rank (u64),
extents (u64 each), float64 data little-endian.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

_MAGIC = b"MTMF"
_VERSION = 1


def save_checkpoint(arrays: dict[str, np.ndarray], path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        for name in sorted(arrays):
            # note: asarray keeps 0-d arrays 0-d where ascontiguousarray would not
            arr = np.asarray(arrays[name], dtype="<f8", order="C")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("truncated checkpoint file")
    return buf


def load_checkpoint(path) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<Q", _read_exact(fh, 8))
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(rank)
            )
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").reshape(shape)
            arrays[name] = data.copy()
    return arrays
