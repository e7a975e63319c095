"""Image sources for tests, examples and desk-scale training.

Natural photographs come from the sample images bundled with scikit-image
(optional dependency); the synthetic generators need only numpy.
"""

from __future__ import annotations

import warnings

import numpy as np

from .lossy.base import check_image

NATURAL_NAMES = (
    "astronaut",
    "chelsea",
    "coffee",
    "rocket",
    "hubble_deep_field",
    "immunohistochemistry",
    "retina",
    "stereo_left",
    "stereo_right",
)


def natural_image(name: str) -> np.ndarray:
    try:
        from skimage import data
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise RuntimeError("natural sample images need scikit-image") from exc
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if name.startswith("stereo_"):
            left, right, _ = data.stereo_motorcycle()
            img = left if name == "stereo_left" else right
        else:
            img = getattr(data, name)()
    img = np.asarray(img)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return np.ascontiguousarray(img[:, :, :3].astype(np.uint8))


def natural_images(names=NATURAL_NAMES) -> dict:
    return {n: natural_image(n) for n in names}


def gradient(h: int, w: int, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    u = np.linspace(0, 1, h)[:, None, None]
    v = np.linspace(0, 1, w)[None, :, None]
    base = rng.uniform(64, 192, size=3)
    a, b = rng.uniform(-255, 255, size=(2, 3))
    img = base + a * (u - 0.5) + b * (v - 0.5)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def noise(h: int, w: int, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def constant(h: int, w: int, color=(128, 128, 128)) -> np.ndarray:
    return np.broadcast_to(np.asarray(color, dtype=np.uint8), (h, w, 3)).copy()


def crop_of(img: np.ndarray, h: int, w: int, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    H, W = img.shape[:2]
    h, w = min(h, H), min(w, W)
    u = int(rng.integers(0, H - h + 1))
    v = int(rng.integers(0, W - w + 1))
    return np.ascontiguousarray(img[u : u + h, v : v + w])


def tiles(img: np.ndarray, size: int) -> list[np.ndarray]:
    """Non-overlapping ``size x size`` tiles in raster order (partial tiles dropped)."""
    check_image(img)
    H, W = img.shape[:2]
    return [
        np.ascontiguousarray(img[u : u + size, v : v + size])
        for u in range(0, H - size + 1, size)
        for v in range(0, W - size + 1, size)
    ]


def mixed_suite(n: int = 50, seed: int = 0, large=(768, 1024), natural: bool = True) -> list[tuple[str, np.ndarray]]:
    """Test images: natural crops, gradients, noise and constants of assorted (incl. odd) sizes.

    One image has size ``large`` (when given); the rest stay between 32x32
    and 160x160 so the suite runs quickly.
    """
    rng = np.random.default_rng(seed)
    photos = list(natural_images().values()) if natural else []
    out = []
    if large:
        src = photos[3 % len(photos)] if photos else None
        big = _resize_to(src, *large) if src is not None else gradient(*large, rng=rng)
        out.append((f"large_{large[0]}x{large[1]}", big))
    kinds = ("natural", "gradient", "noise", "constant") if photos else ("gradient", "noise", "constant")
    i = 0
    while len(out) < n:
        kind = kinds[i % len(kinds)]
        h, w = (int(t) for t in rng.integers(32, 161, size=2))
        if i % 3 == 0:
            h |= 1
        if kind == "natural":
            img = crop_of(photos[i % len(photos)], h, w, rng)
        elif kind == "gradient":
            img = gradient(h, w, rng)
        elif kind == "noise":
            img = noise(h, w, rng)
        else:
            img = constant(h, w, tuple(int(c) for c in rng.integers(0, 256, 3)))
        out.append((f"{kind}_{i:02d}_{img.shape[0]}x{img.shape[1]}", img))
        i += 1
    return out


def _resize_to(img: np.ndarray, h: int, w: int) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.fromarray(img).resize((w, h), Image.LANCZOS), dtype=np.uint8).copy()
