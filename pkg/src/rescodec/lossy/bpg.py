"""Adapter around the external ``bpgenc`` / ``bpgdec`` binaries.

The payload is the BPG file verbatim. ``x_l`` is always obtained by running
the decoder on that payload, so encoder and decoder agree bit-exactly.
"""

from __future__ import annotations

import logging
import os
import shutil
import subprocess
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .base import CODEC_BPG, LossyResult, check_image, check_q

log = logging.getLogger(__name__)

ENV_ENCODER = "RC_BPGENC"
ENV_DECODER = "RC_BPGDEC"


class BpgError(RuntimeError):
    """The BPG binaries are missing, failed, or returned an unusable image."""


def _locate(explicit, env_key: str, default: str) -> str | None:
    if explicit:
        return str(explicit)
    if os.environ.get(env_key):
        return os.environ[env_key]
    return shutil.which(default)


def bpg_available(encoder=None, decoder=None) -> bool:
    enc = _locate(encoder, ENV_ENCODER, "bpgenc")
    dec = _locate(decoder, ENV_DECODER, "bpgdec")
    return bool(enc and dec and os.access(enc, os.X_OK) and os.access(dec, os.X_OK))


def _run(cmd: list[str], what: str) -> subprocess.CompletedProcess:
    try:
        proc = subprocess.run(cmd, capture_output=True)
    except FileNotFoundError:
        raise BpgError(f"{what} binary not found: {cmd[0]}") from None
    except PermissionError:
        raise BpgError(f"{what} binary not executable: {cmd[0]}") from None
    if proc.returncode != 0:
        msg = proc.stderr.decode(errors="replace").strip()
        raise BpgError(f"{what} exited with status {proc.returncode}: {msg}")
    return proc


class BpgBackend:
    codec_id = CODEC_BPG
    name = "bpg"

    def __init__(self, encoder=None, decoder=None, extra_flags: Sequence[str] = ()):
        self.encoder = _locate(encoder, ENV_ENCODER, "bpgenc")
        self.decoder = _locate(decoder, ENV_DECODER, "bpgdec")
        self.extra_flags = list(extra_flags)
        if not self.encoder:
            raise BpgError(f"bpgenc not found; set {ENV_ENCODER} or put it on PATH")
        if not self.decoder:
            raise BpgError(f"bpgdec not found; set {ENV_DECODER} or put it on PATH")
        self._log_versions()

    def _log_versions(self) -> None:
        for path in (self.encoder, self.decoder):
            try:
                proc = subprocess.run([path, "-h"], capture_output=True, timeout=10)
                head = (proc.stdout or proc.stderr).decode(errors="replace").splitlines()
                log.info("%s: %s", path, head[0] if head else "(no banner)")
            except (OSError, subprocess.TimeoutExpired) as exc:
                log.info("%s: version probe failed (%s)", path, exc)
        log.info("bpgenc flags: -f 444 %s", " ".join(self.extra_flags) or "(defaults)")

    def compress(self, x: np.ndarray, q: int) -> LossyResult:
        from PIL import Image

        x = check_image(x)
        q = check_q(q)
        with tempfile.TemporaryDirectory(prefix="rc_bpg_") as tmp:
            src = Path(tmp) / "in.png"
            out = Path(tmp) / "out.bpg"
            Image.fromarray(x, "RGB").save(src)
            _run([self.encoder, "-q", str(q), "-f", "444", *self.extra_flags, "-o", str(out), str(src)], "bpgenc")
            if not out.exists():
                raise BpgError("bpgenc produced no output file")
            payload = out.read_bytes()
        x_l = self.decompress(payload)
        if x_l.shape != x.shape:
            raise BpgError(f"bpgdec returned {x_l.shape}, expected {x.shape}")
        return LossyResult(payload, x_l, self.codec_id, q)

    def decompress(self, payload: bytes) -> np.ndarray:
        from PIL import Image

        with tempfile.TemporaryDirectory(prefix="rc_bpg_") as tmp:
            src = Path(tmp) / "in.bpg"
            out = Path(tmp) / "out.png"
            src.write_bytes(payload)
            _run([self.decoder, "-o", str(out), str(src)], "bpgdec")
            if not out.exists():
                raise BpgError("bpgdec produced no output file")
            with Image.open(out) as im:
                if im.mode not in ("RGB", "RGBA"):
                    raise BpgError(f"bpgdec returned mode {im.mode}")
                return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
