"""Per-image rescaling of the predicted scales.

Every (channel, component) pair gets a factor ``tau[c, k]`` and the coder
uses ``sigma~ = max(tau * sigma, SIGMA_MIN)``. The 15 factors are fitted per
image by SGD with momentum on ``log tau`` and sent as side information.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from numba import njit

from .mixture import LN2, P_FLOOR, RMAX, RMIN, SIGMA_MIN, MixtureParams

TAU_MIN = 0.1
TAU_MAX = 10.0
SGD_LR = 9e-2
SGD_MOMENTUM = 0.9
ITERATIONS = 20
SUBSAMPLE = 2


class TauError(ValueError):
    pass


@dataclass(frozen=True)
class TauTable:
    """``values`` is ``[3, K]`` float32; serialization is channel-major, component-minor."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] != 3:
            raise TauError(f"tau must be [3, K], got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise TauError("tau must be finite")
        lo, hi = np.float32(TAU_MIN), np.float32(TAU_MAX)
        if np.any(v < lo) or np.any(v > hi):
            raise TauError(f"tau outside [{TAU_MIN}, {TAU_MAX}]")
        object.__setattr__(self, "values", v.copy())

    @classmethod
    def identity(cls, k: int = 5) -> "TauTable":
        return cls(np.ones((3, k), dtype=np.float32))

    @classmethod
    def from_log(cls, theta) -> "TauTable":
        tau = np.exp(np.asarray(theta, dtype=np.float64)).astype(np.float32)
        return cls(np.clip(tau, np.float32(TAU_MIN), np.float32(TAU_MAX)))

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def nbytes(self) -> int:
        return 4 * self.values.size

    def to_bytes(self) -> bytes:
        return struct.pack(f"<{self.values.size}f", *self.values.ravel())

    @classmethod
    def from_bytes(cls, data: bytes, k: int = 5) -> "TauTable":
        if len(data) != 12 * k:
            raise TauError(f"tau section must be {12 * k} bytes, got {len(data)}")
        vals = np.array(struct.unpack(f"<{3 * k}f", data), dtype=np.float32).reshape(3, k)
        return cls(vals)

    def is_identity(self) -> bool:
        return bool(np.all(self.values == 1.0))


def apply_tau(params: MixtureParams, tau: TauTable | np.ndarray | None) -> MixtureParams:
    """Return params with ``sigma[k, c] * tau[c, k]`` clamped below at ``SIGMA_MIN``."""
    if tau is None:
        return params
    t = tau.values if isinstance(tau, TauTable) else np.asarray(tau, dtype=np.float32)
    scale = t.astype(np.float64).T[:, :, None, None]
    sigma = np.maximum(params.sigma.astype(np.float64) * scale, SIGMA_MIN).astype(params.sigma.dtype)
    return MixtureParams(params.pi, params.mu, sigma, params.lam)


# ---------------------------------------------------------------------------
# objective and gradient


@njit(cache=True)
def _sig2(z):
    """``(sigmoid(z), sigmoid(-z))`` from a single exponential."""
    e = math.exp(-abs(z))
    lo = e / (1.0 + e)
    if z >= 0:
        return 1.0 - lo, lo
    return lo, 1.0 - lo


@njit(cache=True)
def _component(r, m, s):
    """Bin mass of a logistic component and its derivative w.r.t. ``log s``."""
    a = (r + 0.5 - m) / s
    b = (r - 0.5 - m) / s
    if r <= RMIN:
        sa, na = _sig2(a)
        return sa, -a * sa * na
    sb, nb = _sig2(b)
    if r >= RMAX:
        return nb, b * sb * nb
    sa, na = _sig2(a)
    # subtract in the tail where both terms are far from 1
    pk = nb - na if b > 0 else sa - sb
    return pk, -a * sa * na + b * sb * nb


@njit(cache=True)
def _objective(res, pi, mu, sigma, lam, taus, want_grad):
    """Bits for each candidate ``taus[t]`` (``[T, 3, K]``) and, for ``taus[0]``, ``d bits / d log tau``.

    Parameter arrays are ``[H, W, 3, K]``; ``res`` is ``[3, H, W]``.
    """
    ncand, _, k = taus.shape
    h, w = res.shape[1], res.shape[2]
    grad = np.zeros((3, k))
    bits = np.zeros(ncand)
    mt = np.zeros(k)
    wk = np.zeros(k)
    dloc = np.zeros(k)
    log_floor = math.log(P_FLOOR)
    for u in range(h):
        for v in range(w):
            r1 = float(res[0, u, v])
            r2 = float(res[1, u, v])
            for c in range(3):
                r = float(res[c, u, v])
                norm = 0.0
                for j in range(k):
                    norm += pi[u, v, c, j]
                for j in range(k):
                    m = mu[u, v, c, j]
                    if c == 1:
                        m += lam[u, v, 0, j] * r1
                    elif c == 2:
                        m += lam[u, v, 1, j] * r1 + lam[u, v, 2, j] * r2
                    mt[j] = m
                    wk[j] = pi[u, v, c, j] / norm
                for t in range(ncand):
                    p = 0.0
                    for j in range(k):
                        s = taus[t, c, j] * sigma[u, v, c, j]
                        live = s > SIGMA_MIN
                        if not live:
                            s = SIGMA_MIN
                        pk, dk = _component(r, mt[j], s)
                        p += wk[j] * pk
                        dloc[j] = wk[j] * dk if live else 0.0
                    if p <= 0.0 or math.log(p) < log_floor:
                        bits[t] -= log_floor / LN2
                        continue
                    bits[t] -= math.log(p) / LN2
                    if want_grad and t == 0:
                        for j in range(k):
                            grad[c, j] -= dloc[j] / (p * LN2)
    return bits, grad


def _arrays(params: MixtureParams, residual):
    def hwck(a):
        return np.ascontiguousarray(np.asarray(a, dtype=np.float64).transpose(2, 3, 1, 0))

    arrs = [hwck(a) for a in (params.pi, params.mu, params.sigma, params.lam)]
    return np.ascontiguousarray(np.asarray(residual, dtype=np.int64)), arrs


def tau_objective(params: MixtureParams, residual, tau, want_grad: bool = True):
    """Bits of ``residual`` (``[3, H, W]``) under ``params`` rescaled by ``tau`` (``[3, K]``), and the log-tau gradient."""
    res, arrs = _arrays(params, residual)
    t = np.ascontiguousarray(np.asarray(tau, dtype=np.float64))[None]
    bits, grad = _objective(res, *arrs, t, want_grad)
    return float(bits[0]), grad


@dataclass
class TauResult:
    tau: TauTable
    bits_before: float
    bits_after: float
    trajectory: list

    @property
    def gain_bits(self) -> float:
        return self.bits_before - self.bits_after


def optimize_tau(
    params: MixtureParams,
    residual,
    iterations: int = ITERATIONS,
    lr: float = SGD_LR,
    momentum: float = SGD_MOMENTUM,
    subsample: int = SUBSAMPLE,
    bounds=(TAU_MIN, TAU_MAX),
) -> TauResult:
    """Fit log tau on the ``subsample``-strided grid; pick the best iterate on the full grid.

    The objective for the SGD steps is bits per subpixel on positions with
    ``u % subsample == 0 and v % subsample == 0``. Every iterate, including
    the initial ``tau = 1``, is then scored on the full grid with the stored
    float32 values and the cheapest one is returned, so
    ``bits_after <= bits_before`` always holds.
    """
    k = params.k
    res_full, arrs_full = _arrays(params, residual)
    sub = params.subsample(subsample)
    res_sub, arrs_sub = _arrays(sub, np.asarray(residual)[:, ::subsample, ::subsample])
    n_sub = max(res_sub.size, 1)
    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    theta = np.zeros((3, k))
    vel = np.zeros((3, k))
    candidates = [theta.copy()]
    for _ in range(iterations):
        _, grad = _objective(res_sub, *arrs_sub, np.exp(theta)[None], True)
        vel = momentum * vel + grad / n_sub
        theta = np.clip(theta - lr * vel, lo, hi)
        candidates.append(theta.copy())

    tables = [TauTable.from_log(th) if np.any(th) else TauTable.identity(k) for th in candidates]
    stacked = np.stack([t.values.astype(np.float64) for t in tables])
    trajectory, _ = _objective(res_full, *arrs_full, stacked, False)
    best = int(np.argmin(trajectory))  # first minimum: ties keep the earlier iterate
    return TauResult(tables[best], float(trajectory[0]), float(trajectory[best]), trajectory.tolist())
