"""Built-in block-DCT base-layer codec.

Each RGB channel is tiled into 8x8 blocks (edge-replicated to a multiple of
8), transformed with a fixed-point DCT, quantized with a flat step
``q - 9`` and entropy coded with static per-band Laplacian tables. Both
transforms are pure integer arithmetic, so the reconstruction is identical
on every platform.

Payload layout (little-endian)::

    b"FBL1"  u8 q  u32 height  u32 width
    3 x (u32 stream_length, range-coded band indices of that channel)

Per channel, blocks are visited in raster order and the 64 coefficients of
a block in row-major (u, v) order. The DC band codes the difference to the
previous block's DC index (the first block predicts 0).
"""

from __future__ import annotations

import functools
import math
import struct

import numpy as np

from .. import rangecoder
from ..mixture import build_cdf_table
from .base import CODEC_FALLBACK, Q_CLASSES, LossyResult, check_image, check_q

MAGIC = b"FBL1"
BLOCK = 8
FRAC_BITS = 13
SCALE_BITS = 2 * FRAC_BITS
TABLE_PRECISION = 16


def _dct_matrix_fixed() -> np.ndarray:
    k = np.arange(BLOCK)[:, None]
    n = np.arange(BLOCK)[None, :]
    c = np.cos((2 * n + 1) * k * np.pi / (2 * BLOCK)) * np.sqrt(2.0 / BLOCK)
    c[0] /= np.sqrt(2.0)
    return np.rint(c * (1 << FRAC_BITS)).astype(np.int64)


DCT_FIXED = _dct_matrix_fixed()


def step_size(q: int) -> int:
    return int(q) - 9


def _round_div(num: np.ndarray, den: int) -> np.ndarray:
    """Integer division rounding half away from zero."""
    mag = (np.abs(num) + den // 2) // den
    return np.where(num < 0, -mag, mag)


def forward_blocks(blocks: np.ndarray, step: int) -> np.ndarray:
    """Quantized coefficient indices for ``[..., 8, 8]`` level-shifted integer blocks."""
    c = DCT_FIXED
    coef = c @ blocks.astype(np.int64) @ c.T
    return _round_div(coef, step << SCALE_BITS)


def inverse_blocks(indices: np.ndarray, step: int) -> np.ndarray:
    """Reconstructed pixel values (before clamping, level shift removed)."""
    c = DCT_FIXED
    rec = c.T @ (indices.astype(np.int64) * step) @ c
    return (rec + (1 << (SCALE_BITS - 1))) >> SCALE_BITS


def _to_blocks(channel: np.ndarray) -> np.ndarray:
    h, w = channel.shape
    return channel.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(bh * BLOCK, bw * BLOCK)


def _padded_shape(h: int, w: int) -> tuple[int, int]:
    return -(-h // BLOCK) * BLOCK, -(-w // BLOCK) * BLOCK


def _band_scales() -> np.ndarray:
    """Typical Laplacian scale (coefficient units) of each AC band; entry 0 is the DC difference."""
    u = np.arange(BLOCK)[:, None]
    v = np.arange(BLOCK)[None, :]
    scale = 20.0 / (1.0 + 0.9 * (u + v)) ** 1.4
    scale[0, 0] = 30.0
    return scale.ravel()


def alphabet_radius(step: int) -> tuple[int, int]:
    """Largest index magnitude for AC bands and for the DC difference."""
    # |coef| <= 1024 for 8-bit input; slack covers fixed-point rounding
    ac = 1024 // step + 2
    return ac, 2 * ac + 2


@functools.lru_cache(maxsize=None)
def band_tables(q: int) -> rangecoder.IndexedTables:
    step = step_size(q)
    ac_r, dc_r = alphabet_radius(step)
    tables = []
    for band, scale in enumerate(_band_scales()):
        radius = dc_r if band == 0 else ac_r
        b = max(scale / math.sqrt(2.0) / step, 0.08)
        values = np.arange(-radius, radius + 1)
        pmf = np.exp(-np.abs(values) / b)
        tables.append(build_cdf_table(pmf / pmf.sum(), TABLE_PRECISION))
    return rangecoder.IndexedTables(tables, np.zeros(0, np.int64), TABLE_PRECISION)


def _channel_tables(q: int, nblocks: int) -> rangecoder.IndexedTables:
    return band_tables(q).with_positions(np.tile(np.arange(BLOCK * BLOCK, dtype=np.int64), nblocks))


def _symbols_from_indices(idx: np.ndarray, step: int) -> np.ndarray:
    """Flatten ``[nblocks, 64]`` indices into coder symbols (DC as DPCM difference)."""
    ac_r, dc_r = alphabet_radius(step)
    sym = idx.copy()
    dc = idx[:, 0]
    sym[:, 0] = np.diff(dc, prepend=0) + dc_r
    sym[:, 1:] += ac_r
    return sym.ravel()


def _indices_from_symbols(sym: np.ndarray, step: int) -> np.ndarray:
    ac_r, dc_r = alphabet_radius(step)
    idx = sym.reshape(-1, BLOCK * BLOCK).copy()
    idx[:, 1:] -= ac_r
    idx[:, 0] = np.cumsum(idx[:, 0] - dc_r)
    return idx


def _reconstruct(indices: np.ndarray, step: int, bh: int, bw: int, h: int, w: int) -> np.ndarray:
    blocks = inverse_blocks(indices.reshape(bh, bw, BLOCK, BLOCK), step) + 128
    return np.clip(_from_blocks(blocks), 0, 255).astype(np.uint8)[:h, :w]


class FallbackBackend:
    """Deterministic DCT codec; ``compress`` and ``decompress`` share one integer reconstruction path."""

    codec_id = CODEC_FALLBACK
    name = "fallback"

    def compress(self, x: np.ndarray, q: int) -> LossyResult:
        x = check_image(x)
        check_q(q)
        h, w, _ = x.shape
        step = step_size(q)
        ph, pw = _padded_shape(h, w)
        padded = np.pad(x, ((0, ph - h), (0, pw - w), (0, 0)), mode="edge").astype(np.int64) - 128
        bh, bw = ph // BLOCK, pw // BLOCK
        parts = [MAGIC, struct.pack("<BII", q, h, w)]
        recon = np.empty((h, w, 3), dtype=np.uint8)
        tables = _channel_tables(q, bh * bw)
        for c in range(3):
            idx = forward_blocks(_to_blocks(padded[:, :, c]), step).reshape(bh * bw, BLOCK * BLOCK)
            stream = rangecoder.encode(_symbols_from_indices(idx, step), tables, TABLE_PRECISION)
            parts += [struct.pack("<I", len(stream.data)), stream.data]
            recon[:, :, c] = _reconstruct(idx, step, bh, bw, h, w)
        return LossyResult(b"".join(parts), recon, self.codec_id, int(q))

    def decompress(self, payload: bytes) -> np.ndarray:
        if payload[:4] != MAGIC:
            raise ValueError("not a fallback-codec payload")
        try:
            q, h, w = struct.unpack_from("<BII", payload, 4)
        except struct.error:
            raise ValueError("truncated fallback payload header") from None
        check_q(q)
        step = step_size(q)
        ph, pw = _padded_shape(h, w)
        bh, bw = ph // BLOCK, pw // BLOCK
        tables = _channel_tables(q, bh * bw)
        pos = 13
        out = np.empty((h, w, 3), dtype=np.uint8)
        for c in range(3):
            if pos + 4 > len(payload):
                raise ValueError(f"truncated fallback payload (channel {c})")
            (n,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            if pos + n > len(payload):
                raise ValueError(f"truncated fallback payload (channel {c})")
            sym = rangecoder.decode(payload[pos : pos + n], tables, count=bh * bw * BLOCK * BLOCK, precision=TABLE_PRECISION)
            pos += n
            out[:, :, c] = _reconstruct(_indices_from_symbols(sym, step), step, bh, bw, h, w)
        return out


__all__ = ["FallbackBackend", "Q_CLASSES", "step_size", "forward_blocks", "inverse_blocks", "band_tables"]
