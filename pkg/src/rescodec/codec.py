"""End-to-end encode/decode: choose Q, lossy base layer, RC model, tau, residual coding."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import container as ct
from .lossy import add_residual, check_image, check_q, compute_residual, get_backend
from .qc import QcNet, optimal_q_search, predict_q
from .rc import MAX_PIXELS, RcNet, model_fingerprint, rc_forward
from .residual_coding import decode_residual, encode_residual
from .tau import TauTable, optimize_tau

log = logging.getLogger(__name__)

MODES = ("fixed", "qc", "optimal")
CONTAINER_K = ct.TAU_BYTES // 12


class CheckpointMismatchError(ValueError):
    """The container was written with different RC weights."""


@dataclass
class EncodeStats:
    height: int
    width: int
    q: int
    total_bytes: int
    lossy_bytes: int
    residual_bytes: int
    tau_gain_bits: float = 0.0
    crops: list = field(default_factory=list)

    @property
    def bpsp(self) -> float:
        return 8.0 * self.total_bytes / (3 * self.height * self.width)

    @property
    def lossy_fraction(self) -> float:
        return self.lossy_bytes / self.total_bytes if self.total_bytes else 0.0

    def line(self) -> str:
        qs = self.q if not self.crops else "/".join(str(c.q) for c in self.crops)
        return (
            f"Q={qs} bpsp={self.bpsp:.4f} lossy_fraction={self.lossy_fraction:.3f} "
            f"tau_gain_bits={self.tau_gain_bits:.1f} bytes={self.total_bytes}"
        )


def _choose(x, rc, mode, q, qc, backend):
    """Return ``(q, lossy_result, params)``; ``params`` is None unless already computed."""
    if mode == "fixed":
        return check_q(q), None, None
    if mode == "qc":
        if qc is None:
            raise ValueError("mode 'qc' needs a Q-classifier")
        return predict_q(x, qc), None, None
    if mode == "optimal":
        res = optimal_q_search(x, rc, backend)
        return res.q_prime, res.best_lossy, res.best_params
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def encode_array(
    x,
    rc: RcNet,
    mode: str = "fixed",
    q: int = 14,
    qc: QcNet | None = None,
    backend=None,
    use_tau: bool = True,
    max_pixels: int = MAX_PIXELS,
) -> tuple[bytes, EncodeStats]:
    """Serialize ``x`` (``[H, W, 3]`` uint8); images above ``max_pixels`` use four independent crops."""
    x = check_image(x)
    backend = backend or get_backend("fallback")
    if rc.config.k != CONTAINER_K:
        raise ValueError(f"containers store tau for K={CONTAINER_K} components, model has K={rc.config.k}")
    h, w, _ = x.shape
    version = model_fingerprint(rc)
    if max_pixels and h * w > max_pixels:
        blobs, crops = [], []
        for rows, cols in ct.quadrants(h, w):
            blob, st = encode_array(x[rows, cols], rc, mode, q, qc, backend, use_tau, max_pixels=0)
            blobs.append(blob)
            crops.append(st)
        data = ct.write_split(version, h, w, blobs)
        stats = EncodeStats(
            h,
            w,
            crops[0].q,
            len(data),
            sum(c.lossy_bytes for c in crops),
            sum(c.residual_bytes for c in crops),
            sum(c.tau_gain_bits for c in crops),
            crops,
        )
        return data, stats

    q, lossy, params = _choose(x, rc, mode, q, qc, backend)
    if lossy is None:
        lossy = backend.compress(x, q)
        params = rc_forward(lossy.x_l, rc, max_pixels=0)
    r = compute_residual(x, lossy.x_l).transpose(2, 0, 1)
    tau = TauTable.identity(rc.config.k)
    resid = encode_residual(r, params, None)
    gain = 0.0
    if use_tau:
        opt = optimize_tau(params, r)
        if not opt.tau.is_identity():
            candidate = encode_residual(r, params, opt.tau.values)
            # keep tau only when the actual coded size shrinks
            if len(candidate) < len(resid):
                gain = 8.0 * (len(resid) - len(candidate))
                resid, tau = candidate, opt.tau
    parts = ct.ContainerParts(version, h, w, q, lossy.codec_id, lossy.payload, tau.to_bytes(), resid)
    data = ct.write_container(parts)
    return data, EncodeStats(h, w, q, len(data), len(lossy.payload), len(resid), gain)


def decode_array(data: bytes, rc: RcNet, backend_factory=get_backend) -> np.ndarray:
    kind = ct.sniff(data)
    version = model_fingerprint(rc)
    if kind == "split":
        v, h, w, blobs = ct.read_split(data)
        _check_version(v, version)
        out = np.empty((h, w, 3), dtype=np.uint8)
        for (rows, cols), blob in zip(ct.quadrants(h, w), blobs):
            out[rows, cols] = decode_array(blob, rc, backend_factory)
        return out
    p = ct.read_container(data)
    _check_version(p.version, version)
    backend = backend_factory(p.codec_id)
    x_l = backend.decompress(p.lossy)
    if x_l.shape != (p.height, p.width, 3):
        raise ct.ContainerError(f"base layer decodes to {x_l.shape}, header says {p.height}x{p.width}")
    params = rc_forward(x_l, rc, max_pixels=0)
    tau = TauTable.from_bytes(p.tau, CONTAINER_K)
    r = decode_residual(p.residual, params, None if tau.is_identity() else tau.values)
    return add_residual(x_l, r.transpose(1, 2, 0))


def _check_version(stored: int, expected: int) -> None:
    if stored != expected:
        raise CheckpointMismatchError(
            f"container was written with RC weights {stored:#06x}, loaded weights are {expected:#06x}"
        )
