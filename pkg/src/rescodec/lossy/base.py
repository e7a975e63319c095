from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Q_CLASSES = tuple(range(11, 18))
CODEC_FALLBACK = 1
CODEC_BPG = 2
CODEC_NAMES = {CODEC_FALLBACK: "fallback", CODEC_BPG: "bpg"}


@dataclass
class LossyResult:
    payload: bytes
    x_l: np.ndarray
    codec_id: int
    q: int


def check_image(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {x.shape}")
    if x.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {x.dtype}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError("empty image")
    return x


def check_q(q) -> int:
    if int(q) not in Q_CLASSES:
        raise ValueError(f"Q={q} outside {Q_CLASSES[0]}..{Q_CLASSES[-1]}")
    return int(q)


def compute_residual(x, x_l) -> np.ndarray:
    """``r = x - x_l`` as int16, ``[H, W, 3]``; values lie in ``[-255, 255]``."""
    x = np.asarray(x)
    x_l = np.asarray(x_l)
    if x.shape != x_l.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_l.shape}")
    return x.astype(np.int16) - x_l.astype(np.int16)


def add_residual(x_l, r) -> np.ndarray:
    out = np.asarray(x_l).astype(np.int16) + np.asarray(r, dtype=np.int16)
    if out.min(initial=0) < 0 or out.max(initial=0) > 255:
        raise ValueError("reconstruction leaves the 8-bit range")
    return out.astype(np.uint8)
