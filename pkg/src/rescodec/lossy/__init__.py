from .base import (
    CODEC_BPG,
    CODEC_FALLBACK,
    CODEC_NAMES,
    Q_CLASSES,
    LossyResult,
    add_residual,
    check_image,
    check_q,
    compute_residual,
)
from .bpg import BpgBackend, BpgError, bpg_available
from .fallback import FallbackBackend


def get_backend(name_or_id="fallback", **kwargs):
    """Backend by name (``"fallback"``, ``"bpg"``) or container codec id."""
    if name_or_id in ("fallback", CODEC_FALLBACK):
        return FallbackBackend()
    if name_or_id in ("bpg", CODEC_BPG):
        return BpgBackend(**kwargs)
    raise ValueError(f"unknown lossy backend {name_or_id!r}")
