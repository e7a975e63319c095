"""Arithmetic coding of a residual under the logistic mixture.

Symbols are visited in raster order, channels 1, 2, 3 within a pixel. For
each subpixel the coder needs the quantized CDF of the 511-bin mixture pmf.
Building the full table per subpixel is wasteful, so the CDF is evaluated
on demand at the bin boundaries it needs::

    C(i)  = sum_k pi_k * sigmoid((i - 255.5 - mu~_k) / sigma~_k)   0 < i < 511
    C(0)  = 0,  C(511) = 1
    Q(i)  = floor(C(i) * (2**24 - 511)) + i

so every bin has width >= 1 and the total is exactly ``2**24``. Encoding
evaluates ``Q`` at the two edges of the coded bin; decoding bisects over
``i``. Both sides run the same compiled helper on float64 copies of the
parameters, so their tables agree bit for bit.

``sigma~ = max(float64(tau[c, k]) * sigma, SIGMA_MIN)``; ``pi`` is
renormalized per subpixel.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from . import rangecoder as rc
from .mixture import NUM_BINS, RMIN, SIGMA_MIN, MixtureParams

PRECISION = 24
TOTAL = 1 << PRECISION
FREE = TOTAL - NUM_BINS


def _prepare(params: MixtureParams, tau):
    """Float64 parameter arrays in ``[H, W, 3, K]`` layout with tau applied."""
    k = params.k
    tau = np.ones((3, k)) if tau is None else np.asarray(tau, dtype=np.float32).astype(np.float64)
    if tau.shape != (3, k):
        raise ValueError(f"tau must be [3, {k}], got {tau.shape}")

    def hwck(a):
        return np.ascontiguousarray(np.asarray(a, dtype=np.float64).transpose(2, 3, 1, 0))

    pi = hwck(params.pi)
    pi = pi / pi.sum(axis=3, keepdims=True)
    sigma = np.maximum(hwck(params.sigma) * tau[None, None], SIGMA_MIN)
    return pi, hwck(params.mu), sigma, hwck(params.lam)


@njit(cache=True)
def _means(mu, lam, u, v, c, r1, r2, out):
    k = mu.shape[3]
    for j in range(k):
        m = mu[u, v, c, j]
        if c == 1:
            m += lam[u, v, 0, j] * r1
        elif c == 2:
            m += lam[u, v, 1, j] * r1 + lam[u, v, 2, j] * r2
        out[j] = m


@njit(cache=True)
def _qcdf(i, pi, sigma, u, v, c, mt):
    if i <= 0:
        return np.int64(0)
    if i >= NUM_BINS:
        return np.int64(TOTAL)
    edge = i + RMIN - 0.5
    acc = 0.0
    for j in range(mt.shape[0]):
        z = (edge - mt[j]) / sigma[u, v, c, j]
        if z >= 0:
            s = 1.0 / (1.0 + math.exp(-z))
        else:
            e = math.exp(z)
            s = e / (1.0 + e)
        acc += pi[u, v, c, j] * s
    if acc < 0.0:
        acc = 0.0
    elif acc > 1.0:
        acc = 1.0
    return np.int64(math.floor(acc * FREE)) + i


@njit(cache=True)
def _encode_kernel(res, pi, mu, sigma, lam):
    h, w = res.shape[1], res.shape[2]
    n = 3 * h * w
    state, buf = rc.enc_new(n * 4)
    mt = np.zeros(mu.shape[3])
    for u in range(h):
        for v in range(w):
            r1 = np.float64(res[0, u, v])
            r2 = np.float64(res[1, u, v])
            for c in range(3):
                _means(mu, lam, u, v, c, r1, r2, mt)
                s = np.int64(res[c, u, v]) - RMIN
                lo = _qcdf(s, pi, sigma, u, v, c, mt)
                hi = _qcdf(s + 1, pi, sigma, u, v, c, mt)
                rc.enc_put(state, buf, lo, hi - lo, PRECISION)
    return rc.enc_finish(state, buf)


@njit(cache=True)
def _decode_kernel(data, pi, mu, sigma, lam):
    h, w = pi.shape[0], pi.shape[1]
    out = np.zeros((3, h, w), dtype=np.int16)
    state = rc.dec_new(data)
    mt = np.zeros(mu.shape[3])
    done = 0
    for u in range(h):
        for v in range(w):
            r1 = 0.0
            r2 = 0.0
            for c in range(3):
                _means(mu, lam, u, v, c, r1, r2, mt)
                t = rc.dec_target(state, PRECISION)
                if t < 0:
                    return out, state[rc._STATUS], done
                lo, hi = 0, NUM_BINS
                qlo, qhi = np.int64(0), np.int64(TOTAL)
                while hi - lo > 1:
                    mid = (lo + hi) >> 1
                    qm = _qcdf(mid, pi, sigma, u, v, c, mt)
                    if qm <= t:
                        lo, qlo = mid, qm
                    else:
                        hi, qhi = mid, qm
                rc.dec_advance(state, data, qlo, qhi - qlo, PRECISION)
                if state[rc._STATUS] != rc.STATUS_OK:
                    return out, state[rc._STATUS], done
                val = lo + RMIN
                out[c, u, v] = val
                if c == 0:
                    r1 = np.float64(val)
                elif c == 1:
                    r2 = np.float64(val)
                done += 1
    return out, state[rc._STATUS], done


@njit(cache=True)
def _ideal_kernel(res, pi, mu, sigma, lam):
    h, w = res.shape[1], res.shape[2]
    bits = 0.0
    mt = np.zeros(mu.shape[3])
    for u in range(h):
        for v in range(w):
            r1 = np.float64(res[0, u, v])
            r2 = np.float64(res[1, u, v])
            for c in range(3):
                _means(mu, lam, u, v, c, r1, r2, mt)
                s = np.int64(res[c, u, v]) - RMIN
                width = _qcdf(s + 1, pi, sigma, u, v, c, mt) - _qcdf(s, pi, sigma, u, v, c, mt)
                bits += PRECISION - math.log2(width)
    return bits


def _check_residual(residual, params: MixtureParams) -> np.ndarray:
    residual = np.ascontiguousarray(np.asarray(residual, dtype=np.int16))
    if residual.ndim != 3 or residual.shape[0] != 3:
        raise ValueError(f"residual must be [3, H, W], got {residual.shape}")
    if residual.shape[1:] != params.spatial:
        raise ValueError(f"residual {residual.shape[1:]} does not match params {params.spatial}")
    if residual.size and (residual.min() < RMIN or residual.max() > -RMIN):
        raise ValueError("residual outside [-255, 255]")
    return residual


def encode_residual(residual, params: MixtureParams, tau=None) -> bytes:
    """Range-code ``residual`` (``[3, H, W]``) under ``params`` rescaled by ``tau`` (``[3, K]``)."""
    residual = _check_residual(residual, params)
    return bytes(_encode_kernel(residual, *_prepare(params, tau)))


def decode_residual(data: bytes, params: MixtureParams, tau=None) -> np.ndarray:
    """Inverse of :func:`encode_residual`; the shape comes from ``params``."""
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    out, status, where = _decode_kernel(buf, *_prepare(params, tau))
    rc.check_status(status, where)
    return out


def coded_bits_estimate(residual, params: MixtureParams, tau=None) -> float:
    """Ideal code length under the quantized 24-bit tables (excludes termination)."""
    residual = _check_residual(residual, params)
    return float(_ideal_kernel(residual, *_prepare(params, tau)))
