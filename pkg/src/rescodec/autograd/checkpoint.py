"""Weight checkpoint files.

Layout (all little-endian)::

    b"RCWT"  u32 version
    repeated until EOF:
        u32 name_length, utf-8 name, u32 rank, rank * u32 extents,
        prod(extents) * float32 values (C order)
"""

from __future__ import annotations

import struct
import zlib
from collections import OrderedDict
from os import PathLike

import numpy as np

MAGIC = b"RCWT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(state) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in state.items():
        arr = np.ascontiguousarray(np.asarray(value, dtype="<f4"))
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(data: bytes) -> "OrderedDict[str, np.ndarray]":
    if data[:4] != MAGIC:
        raise CheckpointError("not a weight checkpoint (bad magic)")
    if len(data) < 8:
        raise CheckpointError("truncated checkpoint header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 8
    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * count > len(data):
                raise CheckpointError(f"truncated data for parameter {name!r}")
            state[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * count
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    return state


def save(path: str | PathLike, state) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(state))


def load(path: str | PathLike) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        return loads(fh.read())


def fingerprint(state) -> int:
    """16-bit identifier of a set of weights (low half of the CRC-32 of the checkpoint bytes)."""
    return zlib.crc32(dumps(state)) & 0xFFFF
