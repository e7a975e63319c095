"""Discrete mixture of logistics over integer residuals.

Residuals live on the fixed support ``[-255, 255]`` (511 bins). Each bin
gets the logistic CDF mass of ``[r - 1/2, r + 1/2]``; the two edge bins
absorb the tails, so every component's pmf sums to one exactly.

Array layout for a single image is ``[K, 3, H, W]`` (component, channel,
row, column). The three channels are coded in order and the means of
channels 2 and 3 are shifted by the residuals of earlier channels::

    mu~_1 = mu_1
    mu~_2 = mu_2 + lam_a * r_1
    mu~_3 = mu_3 + lam_b * r_1 + lam_g * r_2

where ``(lam_a, lam_b, lam_g)`` are stored in ``lam[:, 0]``, ``lam[:, 1]``
and ``lam[:, 2]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd.tensor import Tensor, as_tensor, make_result, stable_sigmoid

RMIN = -255
RMAX = 255
NUM_BINS = RMAX - RMIN + 1
SIGMA_MIN = 1e-3
P_FLOOR = 1e-12
LOG_P_FLOOR = math.log(P_FLOOR)
LN2 = math.log(2.0)


@dataclass
class MixtureParams:
    """Per-subpixel mixture parameters, each ``[K, 3, H, W]``."""

    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray

    @property
    def k(self) -> int:
        return self.pi.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.pi.shape[2], self.pi.shape[3]

    def validate(self, atol: float = 1e-6) -> None:
        shape = self.pi.shape
        if len(shape) != 4 or shape[1] != 3:
            raise ValueError(f"mixture params must be [K,3,H,W], got {shape}")
        for name in ("mu", "sigma", "lam"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} shape {getattr(self, name).shape} != {shape}")
        if np.any(np.abs(self.pi.sum(axis=0, dtype=np.float64) - 1.0) > atol):
            raise ValueError("mixture weights do not sum to one")
        if np.any(self.sigma < SIGMA_MIN * (1 - 1e-6)):
            raise ValueError("sigma below SIGMA_MIN")

    def at(self, u: int, v: int) -> "MixtureParams":
        """Parameters of a single pixel (arrays shaped ``[K, 3]``)."""
        return MixtureParams(self.pi[:, :, u, v], self.mu[:, :, u, v], self.sigma[:, :, u, v], self.lam[:, :, u, v])

    def crop(self, h: int, w: int) -> "MixtureParams":
        return MixtureParams(*(a[:, :, :h, :w] for a in (self.pi, self.mu, self.sigma, self.lam)))

    def subsample(self, step: int = 2) -> "MixtureParams":
        return MixtureParams(*(a[:, :, ::step, ::step] for a in (self.pi, self.mu, self.sigma, self.lam)))

    def astype(self, dtype) -> "MixtureParams":
        return MixtureParams(*(np.asarray(a, dtype=dtype) for a in (self.pi, self.mu, self.sigma, self.lam)))


def sigmoid(x):
    return stable_sigmoid(np.asarray(x, dtype=np.float64))


def logistic_cdf(x, mu, sigma):
    return sigmoid((np.asarray(x, dtype=np.float64) - mu) / sigma)


def discrete_logistic_pmf(r, mu, sigma, support=(RMIN, RMAX)):
    """Probability of integer ``r`` under a logistic discretized onto ``support``."""
    rmin, rmax = support
    r = np.asarray(r)
    if np.any(r < rmin) or np.any(r > rmax):
        raise ValueError(f"residual outside support [{rmin}, {rmax}]")
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    upper = np.where(r == rmax, 1.0, logistic_cdf(r + 0.5, mu, sigma))
    lower = np.where(r == rmin, 0.0, logistic_cdf(r - 0.5, mu, sigma))
    return upper - lower


def conditional_means(mu, lam, r_prev):
    """Shift channel means by previous-channel residuals.

    ``mu`` and ``lam`` are ``[K, 3, ...]``; ``r_prev`` is ``[2, ...]`` (or
    ``[3, ...]``, the last channel is ignored) and broadcasts against
    ``mu[:, 0]``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    r1 = np.asarray(r_prev[0], dtype=np.float64)
    r2 = np.asarray(r_prev[1], dtype=np.float64)
    out = mu.copy()
    out[:, 1] = mu[:, 1] + lam[:, 0] * r1
    out[:, 2] = mu[:, 2] + lam[:, 1] * r1 + lam[:, 2] * r2
    return out


def pixel_pmf(params: MixtureParams, channel: int, r_prev=(), support=(RMIN, RMAX)) -> np.ndarray:
    """Mixture pmf over the whole support for one subpixel.

    ``params`` holds ``[K, 3]`` arrays for a single position; ``r_prev``
    gives the residuals of the channels before ``channel``.
    """
    if not 0 <= channel <= 2:
        raise ValueError("channel must be 0, 1 or 2")
    if len(r_prev) < channel:
        raise ValueError(f"channel {channel} needs {channel} previous residuals")
    prev = list(r_prev) + [0] * (2 - len(r_prev))
    mu_t = conditional_means(params.mu, params.lam, prev[:2])[:, channel]
    pi = np.asarray(params.pi[:, channel], dtype=np.float64)
    pi = pi / pi.sum()
    sigma = np.asarray(params.sigma[:, channel], dtype=np.float64)
    rmin, rmax = support
    bounds = np.arange(rmin, rmax, dtype=np.float64) + 0.5
    cdf = sigmoid((bounds[None, :] - mu_t[:, None]) / sigma[:, None])
    cdf = np.concatenate([np.zeros((len(pi), 1)), cdf, np.ones((len(pi), 1))], axis=1)
    comp = np.diff(cdf, axis=1)
    return pi @ comp


# ---------------------------------------------------------------------------
# log-likelihood with analytic gradients


def _softplus(x):
    return np.logaddexp(0.0, x)


def _component_logpmf(r, mu_t, sigma, rmin=RMIN, rmax=RMAX, need_grad=False):
    """Stable ``log p_L(r)`` per component, plus derivatives w.r.t. ``mu_t`` and ``sigma``.

    Interior bins use ``log(sig(a) - sig(b)) = log(expm1(d)) - softplus(a) - softplus(-b)``
    with ``a = (r + 1/2 - mu)/s``, ``b = (r - 1/2 - mu)/s`` and ``d = a - b = 1/s``.
    """
    inv = 1.0 / sigma
    centered = r - mu_t
    a = (centered + 0.5) * inv
    b = (centered - 0.5) * inv
    # log(expm1(d)) for d = 1/sigma > 0
    log_em1 = inv + np.log(-np.expm1(-inv))
    interior = log_em1 - _softplus(a) - _softplus(-b)
    lo = r == rmin
    hi = r == rmax
    lp = np.where(lo, -_softplus(-a), np.where(hi, -_softplus(b), interior))
    if not need_grad:
        return lp, None, None
    sa = stable_sigmoid(a)
    snb = stable_sigmoid(-b)
    dlp_da = np.where(lo, 1.0 - sa, np.where(hi, 0.0, -sa))
    dlp_db = np.where(lo, 0.0, np.where(hi, -(1.0 - snb), snb))
    dlp_dd = np.where(lo | hi, 0.0, 1.0 / (-np.expm1(-inv)))
    dmu = -(dlp_da + dlp_db) * inv
    dsigma = -(dlp_da * a + dlp_db * b) * inv - dlp_dd * inv * inv
    return lp, dmu, dsigma


def _mixture_terms(logits, mu, sigma, lam, r, kaxis, need_grad):
    """Shared forward (and backward pieces) for the mixture log-likelihood.

    Arrays are ``[..., K, 3, H, W]`` with ``kaxis`` the component axis; ``r``
    is ``[..., 3, H, W]``.
    """
    r = np.asarray(r, dtype=np.float64)
    rk = np.expand_dims(r, kaxis)
    chan = kaxis + 1
    r0 = np.take(rk, [0], axis=chan)
    r1 = np.take(rk, [1], axis=chan)
    mu_t = np.concatenate(
        [
            np.take(mu, [0], axis=chan),
            np.take(mu, [1], axis=chan) + np.take(lam, [0], axis=chan) * r0,
            np.take(mu, [2], axis=chan) + np.take(lam, [1], axis=chan) * r0 + np.take(lam, [2], axis=chan) * r1,
        ],
        axis=chan,
    )
    lp, dmu_t, dsigma = _component_logpmf(rk, mu_t, sigma, need_grad=need_grad)
    shifted = logits - logits.max(axis=kaxis, keepdims=True)
    log_pi = shifted - np.log(np.exp(shifted).sum(axis=kaxis, keepdims=True))
    joint = log_pi + lp
    top = joint.max(axis=kaxis, keepdims=True)
    logp = np.squeeze(top, kaxis) + np.log(np.exp(joint - top).sum(axis=kaxis))
    return logp, joint, log_pi, dmu_t, dsigma, r0, r1


def mixture_logprob(params: MixtureParams, residual) -> np.ndarray:
    """Natural-log probability ``log p_m`` of each subpixel, shape ``[3, H, W]`` (no floor)."""
    p = params.astype(np.float64)
    logits = np.log(np.maximum(p.pi, 1e-300))
    logp, *_ = _mixture_terms(logits, p.mu, p.sigma, p.lam, residual, 0, need_grad=False)
    return logp


def nll_bits(residual, params: MixtureParams, return_clamped: bool = False):
    """Total code length ``sum -log2 p_m`` of ``residual`` (``[3, H, W]``) in bits.

    Probabilities below ``P_FLOOR`` are clamped; with ``return_clamped`` the
    number of clamped subpixels is returned as well.
    """
    residual = np.asarray(residual)
    if residual.min(initial=0) < RMIN or residual.max(initial=0) > RMAX:
        raise ValueError("residual outside support")
    logp = mixture_logprob(params, residual)
    clamped = logp < LOG_P_FLOOR
    bits = float(-np.maximum(logp, LOG_P_FLOOR).sum() / LN2)
    if return_clamped:
        return bits, int(clamped.sum())
    return bits


def bits_per_subpixel_map(residual, params: MixtureParams) -> np.ndarray:
    return -np.maximum(mixture_logprob(params, residual), LOG_P_FLOOR) / LN2


def mixture_nll_bits(logits, mu, sigma, lam, residual, kaxis: int = 1) -> Tensor:
    """Differentiable total bits of ``residual`` under the mixture.

    ``logits``, ``mu``, ``sigma`` (already positive) and ``lam`` are tensors
    shaped ``[B, K, 3, H, W]`` (component axis ``kaxis``); ``residual`` is an
    integer array ``[B, 3, H, W]``. Subpixels whose probability falls below
    ``P_FLOOR`` contribute the floor value and no gradient.
    """
    logits, mu, sigma, lam = (as_tensor(t) for t in (logits, mu, sigma, lam))
    dtype = mu.dtype
    lg, m, s, l = (t.data.astype(np.float64) for t in (logits, mu, sigma, lam))
    logp, joint, log_pi, dmu_t, dsigma, r0, r1 = _mixture_terms(lg, m, s, l, residual, kaxis, need_grad=True)
    live = logp >= LOG_P_FLOOR
    total = -np.where(live, logp, LOG_P_FLOOR).sum() / LN2
    chan = kaxis + 1

    def backward(g):
        # d total / d logp = -1/ln2 on unclamped subpixels
        scale = np.expand_dims(np.where(live, -float(g) / LN2, 0.0), kaxis)
        resp = np.exp(joint - np.expand_dims(logp, kaxis))
        glog = scale * (resp - np.exp(log_pi))
        gmu_t = scale * resp * dmu_t
        gsig = scale * resp * dsigma
        g0 = np.take(gmu_t, [1], axis=chan)
        g2 = np.take(gmu_t, [2], axis=chan)
        glam = np.concatenate([g0 * r0, g2 * r0, g2 * r1], axis=chan)
        cast = lambda a: a.astype(dtype)
        return cast(glog), cast(gmu_t), cast(gsig), cast(glam)

    return make_result(np.asarray(total, dtype=dtype), (logits, mu, sigma, lam), backward)


# ---------------------------------------------------------------------------
# quantized tables and sampling


def build_cdf_table(pmf, precision: int = 16) -> np.ndarray:
    """Integer CDF with total ``2**precision``; every symbol gets at least one count.

    The ``total - n`` free counts are split proportionally to ``pmf`` with
    largest-remainder rounding (ties go to the lower index).
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    n = pmf.size
    total = 1 << precision
    if n > total:
        raise ValueError(f"support of {n} symbols does not fit {precision}-bit tables")
    if np.any(pmf < 0) or not np.isfinite(pmf).all():
        raise ValueError("pmf must be finite and non-negative")
    mass = pmf.sum()
    if abs(mass - 1.0) > 1e-6:
        raise ValueError(f"pmf sums to {mass}, expected 1")
    free = total - n
    ideal = pmf / mass * free
    base = np.floor(ideal).astype(np.int64)
    leftover = free - int(base.sum())
    if leftover > 0:
        order = np.argsort(-(ideal - base), kind="stable")
        base[order[:leftover]] += 1
    counts = base + 1
    return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)


def sample(params: MixtureParams, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Draw a residual ``[3, H, W]`` from the mixture, channel by channel."""
    rng = np.random.default_rng(rng)
    p = params.astype(np.float64)
    k, _, h, w = p.pi.shape
    out = np.zeros((3, h, w), dtype=np.int64)
    for c in range(3):
        mu_t = conditional_means(p.mu, p.lam, out[:2])[:, c]
        pi = p.pi[:, c] / p.pi[:, c].sum(axis=0, keepdims=True)
        cum = np.cumsum(pi, axis=0)
        pick = rng.random((h, w))
        comp = np.minimum((pick[None] >= cum).sum(axis=0), k - 1)
        m = np.take_along_axis(mu_t, comp[None], axis=0)[0]
        s = np.take_along_axis(p.sigma[:, c], comp[None], axis=0)[0]
        u = rng.random((h, w))
        u = np.clip(u, 1e-12, 1 - 1e-12)
        x = m + s * (np.log(u) - np.log1p(-u))
        out[c] = np.clip(np.rint(x), RMIN, RMAX).astype(np.int64)
    return out
