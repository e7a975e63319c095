"""Range coder with externally supplied cumulative frequency tables.

Stream format
-------------
The coder keeps a 48-bit ``low`` (plus one carry bit) and a 48-bit
``range``. For each symbol with cumulative count ``cum``, width ``freq``
and table total ``2**P``::

    r = range >> P
    low += r * cum
    range = r * freq
    while range < 2**40:           # byte-wise renormalization
        shift_low(); range <<= 8

``shift_low`` emits the top byte of the 48-bit window with carry
propagation through a one-byte cache and a run of pending ``0xFF`` bytes
(the scheme used by LZMA's range encoder, widened to 48 bits). The first
emitted byte is always zero and is not written. At the end the encoder
picks the value in ``[low, low + range)`` with the most trailing zero
bytes, flushes it, and strips up to six trailing zero bytes. The decoder
reads missing bytes past the end of the stream as zero, up to six of
them; needing more means the stream was truncated.

Decoder::

    code = first 6 bytes (big endian); range = 2**48 - 1
    r = range >> P; target = code // r     # must be < 2**P
    find s with cum[s] <= target < cum[s + 1]
    code -= r * cum[s]; range = r * freq
    while range < 2**40: code = (code << 8) | next_byte(); range <<= 8

The decoder needs the symbol count; there is no in-band terminator.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numba import njit

STATE_BITS = 48
TOP = 1 << STATE_BITS
MASK = TOP - 1
RENORM = 1 << (STATE_BITS - 8)
SHIFT = STATE_BITS - 8
STATE_BYTES = STATE_BITS // 8
MAX_PRECISION = 24

# encoder state slots
_LOW, _RANGE, _CACHE, _CACHE_SIZE, _POS = 0, 1, 2, 3, 4
# decoder state slots
_CODE, _DRANGE, _DPOS, _OVERREAD, _STATUS = 0, 1, 2, 3, 4

STATUS_OK = 0
STATUS_TRUNCATED = 1
STATUS_CORRUPT = 2


class DecodeError(ValueError):
    """The stream cannot be decoded with the supplied tables."""


class TruncatedStreamError(DecodeError):
    pass


@dataclass(frozen=True)
class CodedStream:
    data: bytes
    symbol_count: int

    def __len__(self) -> int:
        return len(self.data)


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def enc_new(capacity):
    state = np.zeros(5, dtype=np.int64)
    state[_RANGE] = MASK
    state[_CACHE_SIZE] = 1
    buf = np.zeros(capacity + 16, dtype=np.uint8)
    return state, buf


@njit(cache=True)
def _shift_low(state, buf):
    low = state[_LOW]
    if (low & MASK) < (0xFF << SHIFT) or (low >> STATE_BITS) != 0:
        carry = low >> STATE_BITS
        temp = state[_CACHE]
        while True:
            buf[state[_POS]] = (temp + carry) & 0xFF
            state[_POS] += 1
            temp = 0xFF
            state[_CACHE_SIZE] -= 1
            if state[_CACHE_SIZE] == 0:
                break
        state[_CACHE] = (low >> SHIFT) & 0xFF
    state[_CACHE_SIZE] += 1
    state[_LOW] = (low & (RENORM - 1)) << 8


@njit(cache=True)
def enc_put(state, buf, cum, freq, precision):
    r = state[_RANGE] >> precision
    state[_LOW] += r * cum
    rng = r * freq
    while rng < RENORM:
        rng <<= 8
        _shift_low(state, buf)
    state[_RANGE] = rng


@njit(cache=True)
def enc_finish(state, buf):
    low = state[_LOW]
    rng = state[_RANGE]
    v = low
    for n in range(1, STATE_BYTES + 1):
        unit = np.int64(1) << (STATE_BITS - 8 * n)
        v = (low + unit - 1) & ~(unit - 1)
        if v < low + rng:
            break
    state[_LOW] = v
    for _ in range(STATE_BYTES + 1):
        _shift_low(state, buf)
    end = state[_POS]
    stripped = 0
    while end > 1 and stripped < STATE_BYTES and buf[end - 1] == 0:
        end -= 1
        stripped += 1
    # byte 0 is the always-zero leading byte
    return buf[1:end].copy()


@njit(cache=True)
def dec_new(data):
    state = np.zeros(5, dtype=np.int64)
    state[_DRANGE] = MASK
    code = np.int64(0)
    for _ in range(STATE_BYTES):
        code = (code << 8) | _next_byte(state, data)
    state[_CODE] = code
    return state


@njit(cache=True)
def _next_byte(state, data):
    pos = state[_DPOS]
    state[_DPOS] = pos + 1
    if pos < data.shape[0]:
        return np.int64(data[pos])
    state[_OVERREAD] += 1
    if state[_OVERREAD] > STATE_BYTES:
        state[_STATUS] = STATUS_TRUNCATED
    return np.int64(0)


@njit(cache=True)
def dec_target(state, precision):
    """Scaled cumulative value of the next symbol (``-1`` if the stream is corrupt)."""
    r = state[_DRANGE] >> precision
    t = state[_CODE] // r
    if t >= (np.int64(1) << precision):
        state[_STATUS] = STATUS_CORRUPT
        return np.int64(-1)
    return t


@njit(cache=True)
def dec_advance(state, data, cum, freq, precision):
    r = state[_DRANGE] >> precision
    state[_CODE] -= r * cum
    rng = r * freq
    code = state[_CODE]
    while rng < RENORM:
        rng <<= 8
        code = (code << 8) | _next_byte(state, data)
    state[_CODE] = code
    state[_DRANGE] = rng


@njit(cache=True)
def _encode_indexed(symbols, cdf_flat, offsets, sizes, table_of, precision):
    n = symbols.shape[0]
    state, buf = enc_new(n * ((precision + 7) // 8 + 1))
    for i in range(n):
        t = table_of[i]
        s = symbols[i]
        base = offsets[t]
        lo = cdf_flat[base + s]
        enc_put(state, buf, lo, cdf_flat[base + s + 1] - lo, precision)
    return enc_finish(state, buf)


@njit(cache=True)
def _decode_indexed(data, n, cdf_flat, offsets, sizes, table_of, precision):
    out = np.zeros(n, dtype=np.int64)
    state = dec_new(data)
    for i in range(n):
        t = table_of[i]
        base = offsets[t]
        target = dec_target(state, precision)
        if target < 0:
            return out, state[_STATUS], i
        lo = 0
        hi = sizes[t]
        # largest s with cdf[s] <= target
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cdf_flat[base + mid] <= target:
                lo = mid
            else:
                hi = mid
        c = cdf_flat[base + lo]
        dec_advance(state, data, c, cdf_flat[base + lo + 1] - c, precision)
        out[i] = lo
        if state[_STATUS] != STATUS_OK:
            return out, state[_STATUS], i
    return out, state[_STATUS], n


# ---------------------------------------------------------------------------
# python interface


class IndexedTables:
    """A bank of CDF tables plus the table index used at each stream position."""

    def __init__(self, tables: Sequence[np.ndarray], table_of, precision: int = 16):
        self.precision = int(precision)
        tables = [np.asarray(t, dtype=np.int64) for t in tables]
        for t in tables:
            validate_cdf(t, self.precision)
        sizes = np.array([len(t) - 1 for t in tables], dtype=np.int64)
        self.sizes = sizes
        self.offsets = np.concatenate([[0], np.cumsum(sizes + 1)[:-1]]).astype(np.int64)
        self.flat = np.concatenate(tables).astype(np.int64) if tables else np.zeros(0, np.int64)
        self.table_of = np.ascontiguousarray(np.asarray(table_of, dtype=np.int64))
        if self.table_of.size and (self.table_of.min() < 0 or self.table_of.max() >= len(tables)):
            raise ValueError("table index out of range")

    def __len__(self) -> int:
        return self.table_of.size

    def with_positions(self, table_of) -> "IndexedTables":
        """Same table bank, different per-position table indices."""
        view = copy.copy(self)
        view.table_of = np.ascontiguousarray(np.asarray(table_of, dtype=np.int64))
        return view

    def table(self, position: int) -> np.ndarray:
        t = self.table_of[position]
        o = self.offsets[t]
        return self.flat[o : o + self.sizes[t] + 1]


def validate_cdf(cdf, precision: int = 16) -> None:
    cdf = np.asarray(cdf)
    if cdf.ndim != 1 or cdf.size < 2:
        raise ValueError("a CDF table needs at least one symbol")
    if cdf[0] != 0 or cdf[-1] != (1 << precision):
        raise ValueError(f"CDF must start at 0 and end at {1 << precision}")
    if np.any(np.diff(cdf) < 1):
        raise ValueError("every symbol needs a nonzero interval")


def _resolve(provider, count: int, precision: int) -> IndexedTables:
    if isinstance(provider, IndexedTables):
        if provider.precision != precision:
            raise ValueError("table precision does not match coder precision")
        if len(provider) < count:
            raise ValueError("fewer table positions than symbols")
        return provider
    if callable(provider):
        return IndexedTables([provider(i) for i in range(count)], np.arange(count), precision)
    raise TypeError("cdf_provider must be IndexedTables or a callable position -> CDF table")


def encode(symbols, cdf_provider: IndexedTables | Callable[[int], np.ndarray], precision: int = 16) -> CodedStream:
    """Encode integer symbols; ``cdf_provider`` maps each position to its CDF table."""
    if not 1 <= precision <= MAX_PRECISION:
        raise ValueError(f"precision must be in [1, {MAX_PRECISION}]")
    symbols = np.ascontiguousarray(np.asarray(symbols, dtype=np.int64).ravel())
    n = symbols.size
    tables = _resolve(cdf_provider, n, precision)
    table_of = tables.table_of[:n]
    if n and (symbols.min() < 0 or np.any(symbols >= tables.sizes[table_of])):
        bad = int(np.flatnonzero((symbols < 0) | (symbols >= tables.sizes[table_of]))[0])
        raise ValueError(f"symbol {symbols[bad]} at position {bad} outside its table support")
    data = _encode_indexed(symbols, tables.flat, tables.offsets, tables.sizes, table_of, precision)
    return CodedStream(bytes(data), n)


def decode(stream: CodedStream | bytes, cdf_provider, count: int | None = None, precision: int = 16) -> np.ndarray:
    """Decode ``count`` symbols (defaults to ``stream.symbol_count``)."""
    if isinstance(stream, CodedStream):
        data = stream.data
        count = stream.symbol_count if count is None else count
    else:
        data = bytes(stream)
    if count is None:
        raise ValueError("symbol count is required")
    tables = _resolve(cdf_provider, count, precision)
    buf = np.frombuffer(data, dtype=np.uint8)
    out, status, where = _decode_indexed(
        buf, count, tables.flat, tables.offsets, tables.sizes, tables.table_of[:count], precision
    )
    check_status(status, where)
    return out


def check_status(status: int, where: int) -> None:
    if status == STATUS_TRUNCATED:
        raise TruncatedStreamError(f"stream truncated (ran out of data at symbol {where})")
    if status == STATUS_CORRUPT:
        raise DecodeError(f"corrupt stream at symbol {where}")


def ideal_bits(symbols, cdf_provider, precision: int = 16) -> float:
    """Code length ``sum -log2(width / 2**P)`` under the quantized tables."""
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    tables = _resolve(cdf_provider, symbols.size, precision)
    idx = tables.offsets[tables.table_of[: symbols.size]] + symbols
    widths = tables.flat[idx + 1] - tables.flat[idx]
    return float(np.sum(precision - np.log2(widths)))
