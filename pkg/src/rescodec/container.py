"""Serialized bitstream: header, base-layer payload, tau and coded residual.

Single image (``RC01``), little-endian::

    offset  size  field
    0       4     magic b"RC01"
    4       2     version (u16, fingerprint of the RC weights)
    6       4     height (u32)
    10      4     width (u32)
    14      1     q (u8)
    15      1     codec_id (u8; 1 = fallback, 2 = BPG)
    16      4     lossy_len (u32)
    20      L     lossy payload
    20+L    60    tau: 15 float32, channel-major
    80+L    4     residual_len (u32)
    84+L    R     coded residual
    84+L+R  4     crc32 of bytes [0, 84+L+R)

Images above the crop threshold are split into four non-overlapping
quadrants, each stored as a complete ``RC01`` container inside ``RCX4``::

    b"RCX4"  u16 version  u32 height  u32 width
    4 x (u32 length, RC01 container)       # order: TL, TR, BL, BR
    u32 crc32 of all preceding bytes
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

MAGIC = b"RC01"
MAGIC_SPLIT = b"RCX4"
TAU_BYTES = 60
HEADER = struct.Struct("<4sHIIBBI")
U32 = struct.Struct("<I")
U32_MAX = 0xFFFFFFFF
FIXED_BYTES = HEADER.size + U32.size  # 24


class ContainerError(ValueError):
    pass


class UnsupportedFormatError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


class TruncatedContainerError(ContainerError):
    def __init__(self, section: str, need: int, have: int):
        super().__init__(f"container truncated in the {section} section (needs {need} bytes, {have} available)")
        self.section = section


@dataclass(frozen=True)
class ContainerParts:
    version: int
    height: int
    width: int
    q: int
    codec_id: int
    lossy: bytes
    tau: bytes
    residual: bytes

    def total_size(self) -> int:
        return FIXED_BYTES + TAU_BYTES + len(self.lossy) + len(self.residual) + 4


def _check_u32(value: int, what: str) -> None:
    if not 0 <= value <= U32_MAX:
        raise ContainerError(f"{what} ({value}) does not fit in 32 bits")


def write_container(p: ContainerParts) -> bytes:
    if not 0 <= p.version <= 0xFFFF:
        raise ContainerError("version must fit in 16 bits")
    _check_u32(p.height, "height")
    _check_u32(p.width, "width")
    _check_u32(len(p.lossy), "lossy section")
    _check_u32(len(p.residual), "residual section")
    if not (0 <= p.q <= 255 and 0 <= p.codec_id <= 255):
        raise ContainerError("q and codec_id must fit in one byte")
    if len(p.tau) != TAU_BYTES:
        raise ContainerError(f"tau section must be exactly {TAU_BYTES} bytes, got {len(p.tau)}")
    body = b"".join(
        [
            HEADER.pack(MAGIC, p.version, p.height, p.width, p.q, p.codec_id, len(p.lossy)),
            p.lossy,
            p.tau,
            U32.pack(len(p.residual)),
            p.residual,
        ]
    )
    return body + U32.pack(zlib.crc32(body))


def _take(data: bytes, pos: int, n: int, section: str) -> bytes:
    if pos + n > len(data):
        raise TruncatedContainerError(section, n, max(len(data) - pos, 0))
    return data[pos : pos + n]


def _check_crc(data: bytes, end: int) -> None:
    stored = U32.unpack(_take(data, end, 4, "crc"))[0]
    if len(data) > end + 4:
        raise ContainerError(f"{len(data) - end - 4} unexpected trailing bytes after the crc")
    if zlib.crc32(data[:end]) != stored:
        raise ChecksumError("crc32 mismatch: container is corrupt")


def read_container(data: bytes) -> ContainerParts:
    data = bytes(data)
    # a short prefix of the magic is a truncated header, anything else is foreign
    if data[:4] != MAGIC[: min(len(data), 4)]:
        raise UnsupportedFormatError(f"unsupported format (magic {data[:4]!r}, expected {MAGIC!r})")
    _, version, height, width, q, codec_id, lossy_len = HEADER.unpack(_take(data, 0, HEADER.size, "header"))
    pos = HEADER.size
    lossy = _take(data, pos, lossy_len, "lossy payload")
    pos += lossy_len
    tau = _take(data, pos, TAU_BYTES, "tau")
    pos += TAU_BYTES
    (res_len,) = U32.unpack(_take(data, pos, 4, "residual"))
    pos += 4
    residual = _take(data, pos, res_len, "residual")
    pos += res_len
    _check_crc(data, pos)
    return ContainerParts(version, height, width, q, codec_id, lossy, tau, residual)


# ---------------------------------------------------------------------------
# four-crop wrapper

SPLIT_HEADER = struct.Struct("<4sHII")


def quadrants(height: int, width: int) -> list[tuple[slice, slice]]:
    """Row/column slices of the four crops (top-left, top-right, bottom-left, bottom-right)."""
    h2, w2 = height // 2, width // 2
    rows = (slice(0, h2), slice(h2, height))
    cols = (slice(0, w2), slice(w2, width))
    return [(r, c) for r in rows for c in cols]


def write_split(version: int, height: int, width: int, parts: list[bytes]) -> bytes:
    if len(parts) != 4:
        raise ContainerError("a split container holds exactly four crops")
    chunks = [SPLIT_HEADER.pack(MAGIC_SPLIT, version, height, width)]
    for p in parts:
        _check_u32(len(p), "crop section")
        chunks += [U32.pack(len(p)), p]
    body = b"".join(chunks)
    return body + U32.pack(zlib.crc32(body))


def read_split(data: bytes) -> tuple[int, int, int, list[bytes]]:
    data = bytes(data)
    if data[:4] != MAGIC_SPLIT:
        raise UnsupportedFormatError(f"unsupported format (magic {data[:4]!r}, expected {MAGIC_SPLIT!r})")
    _, version, height, width = SPLIT_HEADER.unpack(_take(data, 0, SPLIT_HEADER.size, "header"))
    pos = SPLIT_HEADER.size
    parts = []
    for i in range(4):
        (n,) = U32.unpack(_take(data, pos, 4, f"crop {i}"))
        pos += 4
        parts.append(_take(data, pos, n, f"crop {i}"))
        pos += n
    _check_crc(data, pos)
    return version, height, width, parts


def sniff(data: bytes) -> str:
    """``"single"``, ``"split"`` or raise :class:`UnsupportedFormatError`."""
    head = bytes(data[:4])
    if head == MAGIC:
        return "single"
    if head == MAGIC_SPLIT:
        return "split"
    raise UnsupportedFormatError(f"unsupported format (magic {head!r})")
