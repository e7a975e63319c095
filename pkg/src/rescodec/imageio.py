"""8-bit RGB image files: binary PPM (no dependencies) and anything Pillow reads."""

from __future__ import annotations

import os
import re

import numpy as np

from .lossy.base import check_image


class ImageReadError(OSError):
    pass


_PPM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_ppm(data: bytes) -> np.ndarray:
    """Parse a binary ``P6`` PPM with maxval 255."""
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PPM_TOKEN.match(data, pos)
        if not m:
            raise ImageReadError("truncated PPM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P6":
        raise ImageReadError(f"only binary P6 PPM is supported, got {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageReadError("malformed PPM header") from None
    if maxval != 255:
        raise ImageReadError(f"only 8-bit PPM is supported (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    n = w * h * 3
    if len(data) < pos + n:
        raise ImageReadError("truncated PPM pixel data")
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=pos).reshape(h, w, 3).copy()


def write_ppm(x: np.ndarray) -> bytes:
    x = check_image(x)
    h, w, _ = x.shape
    return f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(x).tobytes()


def read_image(path) -> np.ndarray:
    """Load an 8-bit RGB image. Grayscale files are expanded to three equal channels."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ImageReadError(f"cannot read {path}: {exc.strerror}") from None
    if data[:2] == b"P6":
        return read_ppm(data)
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.mode == "L":
                im = im.convert("RGB")
            if im.mode != "RGB":
                raise ImageReadError(f"{path}: mode {im.mode} is not 8-bit RGB")
            return np.asarray(im, dtype=np.uint8).copy()
    except UnidentifiedImageError:
        raise ImageReadError(f"{path}: unrecognized image format") from None


def write_image(path, x: np.ndarray) -> None:
    path = os.fspath(path)
    x = check_image(x)
    if path.lower().endswith((".ppm", ".pnm")):
        with open(path, "wb") as fh:
            fh.write(write_ppm(x))
        return
    from PIL import Image

    Image.fromarray(x, "RGB").save(path)
