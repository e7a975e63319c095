"""Evaluation and dataset tooling behind the CLI: bpsp tables, prep, sampling grids, histograms."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import encode_array
from .imageio import ImageReadError, read_image, write_image
from .lossy import compute_residual, get_backend
from .mixture import NUM_BINS, RMAX, RMIN, sample
from .qc import predict_q
from .rc import MAX_PIXELS, rc_forward

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm", ".pnm", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg")
PREP_FACTOR = (0.6, 0.8)
PREP_MIN_SIZE = 160
RESTRICTED = 6


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise NotADirectoryError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


# ---------------------------------------------------------------------------
# bpsp tables


@dataclass
class EvalRow:
    image_id: str
    bpsp: float
    png_bpsp: float | None
    lossy_fraction: float
    q: str
    bytes: int
    crops: int = 1

    def __post_init__(self):
        if not self.bpsp > 0:
            raise ValueError(f"{self.image_id}: bpsp must be positive")
        if not 0.0 <= self.lossy_fraction <= 1.0:
            raise ValueError(f"{self.image_id}: lossy fraction {self.lossy_fraction} outside [0, 1]")


@dataclass
class EvalConfig:
    mode: str = "fixed"
    q: int = 14
    backend: str = "fallback"
    use_tau: bool = True
    max_pixels: int = MAX_PIXELS
    workers: int = 1


@dataclass
class EvalSummary:
    rows: list
    skipped: list
    mean_bpsp: float
    mean_png_bpsp: float | None
    mean_lossy_fraction: float


def bpsp_of(nbytes: int, height: int, width: int) -> float:
    return 8.0 * nbytes / (3 * height * width)


def evaluate_bpsp(directory, rc, config: EvalConfig | None = None, out_dir=None, csv_path=None, qc=None) -> EvalSummary:
    """Encode every image in ``directory``; bpsp comes from the container size on disk.

    ``png_bpsp`` is the size of the source file itself when it is a PNG
    (whole image, no crops); ``crops`` says whether our number came from
    the 4-crop path. Rows in the CSV are sorted by our bpsp.
    """
    config = config or EvalConfig()
    backend = get_backend(config.backend)
    paths = list_images(directory)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    def work(path: Path):
        try:
            x = read_image(path)
        except ImageReadError as exc:
            return None, f"{path.name}: {exc}"
        data, stats = encode_array(x, rc, config.mode, config.q, qc, backend, config.use_tau, config.max_pixels)
        if out_dir:
            target = out_dir / (path.stem + ".rc")
            target.write_bytes(data)
            nbytes = os.path.getsize(target)
        else:
            nbytes = len(data)
        h, w = x.shape[:2]
        png = bpsp_of(os.path.getsize(path), h, w) if path.suffix.lower() == ".png" else None
        qs = "/".join(str(c.q) for c in stats.crops) if stats.crops else str(stats.q)
        frac = stats.lossy_bytes / nbytes
        ncrops = len(stats.crops) or 1
        return EvalRow(path.stem, bpsp_of(nbytes, h, w), png, frac, qs, nbytes, ncrops), None

    # map preserves input order regardless of completion order
    with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
        results = list(pool.map(work, paths))
    rows = [r for r, _ in results if r is not None]
    skipped = [msg for _, msg in results if msg is not None]
    for msg in skipped:
        log.warning("skipped %s", msg)
    rows.sort(key=lambda r: (r.bpsp, r.image_id))
    pngs = [r.png_bpsp for r in rows if r.png_bpsp is not None]
    summary = EvalSummary(
        rows,
        skipped,
        float(np.mean([r.bpsp for r in rows])) if rows else math.nan,
        float(np.mean(pngs)) if pngs else None,
        float(np.mean([r.lossy_fraction for r in rows])) if rows else math.nan,
    )
    if csv_path:
        write_eval_csv(summary, csv_path)
    return summary


def write_eval_csv(summary: EvalSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "image_id", "bpsp", "png_bpsp_full_image", "lossy_fraction", "q", "bytes", "crops"])
        for i, r in enumerate(summary.rows):
            png = "" if r.png_bpsp is None else f"{r.png_bpsp:.5f}"
            w.writerow([i, r.image_id, f"{r.bpsp:.5f}", png, f"{r.lossy_fraction:.5f}", r.q, r.bytes, r.crops])


# ---------------------------------------------------------------------------
# training data preparation


def downscale(x: np.ndarray, factor: float) -> np.ndarray:
    """Lanczos-3 resample to ``ceil(factor * d)`` along each axis."""
    from PIL import Image

    h, w = x.shape[:2]
    size = (math.ceil(factor * w), math.ceil(factor * h))
    return np.asarray(Image.fromarray(x, "RGB").resize(size, Image.LANCZOS), dtype=np.uint8).copy()


def prep_dataset(src, dst, seed: int = 0, factor_range=PREP_FACTOR, min_size: int = PREP_MIN_SIZE) -> list[Path]:
    """Downscale every image by its own uniform factor in ``factor_range``; outputs are PNG.

    Factors are drawn in sorted file order from one generator, so the
    same seed and inputs give identical files.
    """
    rng = np.random.default_rng(seed)
    dst = Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    written = []
    for path in list_images(src):
        try:
            x = read_image(path)
        except ImageReadError as exc:
            log.warning("skipped %s: %s", path.name, exc)
            continue
        if min(x.shape[:2]) < min_size:
            log.warning("skipped %s: smaller than %dx%d", path.name, min_size, min_size)
            continue
        f = float(rng.uniform(*factor_range))
        target = dst / (path.stem + ".png")
        write_image(target, downscale(x, f))
        written.append(target)
    return written


# ---------------------------------------------------------------------------
# sampling visualization


def residual_to_rgb(r: np.ndarray, scale: float) -> np.ndarray:
    """``[3, H, W]`` residual -> ``[H, W, 3]`` uint8 centred at 128; exact zeros are white."""
    r = np.asarray(r)
    g = 128.0 + 127.0 * r / max(scale, 1.0)
    img = np.clip(np.rint(g), 0, 255).astype(np.uint8)
    img[r == 0] = 255
    return img.transpose(1, 2, 0)


def sample_visualization(x, rc, backend, q: int, n: int = 2, seed: int = 0):
    """Panels ``x | x_l | r | sample_1 .. sample_n`` side by side, plus the raw samples."""
    lossy = backend.compress(x, q)
    params = rc_forward(lossy.x_l, rc)
    r = compute_residual(x, lossy.x_l).transpose(2, 0, 1)
    rng = np.random.default_rng(seed)
    samples = [sample(params, rng) for _ in range(n)]
    scale = max([float(np.abs(r).max())] + [float(np.abs(s).max()) for s in samples])
    panels = [np.asarray(x), lossy.x_l, residual_to_rgb(r, scale)] + [residual_to_rgb(s, scale) for s in samples]
    return np.concatenate(panels, axis=1), r, samples


def bhattacharyya(a: np.ndarray, b: np.ndarray) -> float:
    """Overlap of two histograms of integer values (1 = identical)."""
    lo = int(min(a.min(), b.min()))
    ha = np.bincount(np.asarray(a).ravel() - lo).astype(np.float64)
    hb = np.bincount(np.asarray(b).ravel() - lo).astype(np.float64)
    m = max(ha.size, hb.size)
    ha = np.pad(ha, (0, m - ha.size)) / ha.sum()
    hb = np.pad(hb, (0, m - hb.size)) / hb.sum()
    return float(np.sum(np.sqrt(ha * hb)))


# ---------------------------------------------------------------------------
# residual histograms


@dataclass
class Histogram:
    counts: np.ndarray  # [3, 511], value r at column r - RMIN

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def restricted_mass(self, radius: int = RESTRICTED) -> float:
        lo, hi = -radius - RMIN, radius - RMIN + 1
        return float(self.counts[:, lo:hi].sum() / max(self.total, 1))


def residual_counts(r: np.ndarray) -> np.ndarray:
    """Per-channel counts of a ``[3, H, W]`` residual."""
    r = np.asarray(r, dtype=np.int64).reshape(3, -1)
    return np.stack([np.bincount(c - RMIN, minlength=NUM_BINS) for c in r])


def residual_histogram(images, backend, q: int | None = 14, qc=None) -> Histogram:
    """Counts of ``x - x_l`` over [-255, 255]; each image uses ``q`` or the QC's choice."""
    counts = np.zeros((3, NUM_BINS), dtype=np.int64)
    for x in images:
        qq = predict_q(x, qc) if qc is not None else q
        x_l = backend.compress(x, qq).x_l
        counts += residual_counts(compute_residual(x, x_l).transpose(2, 0, 1))
    return Histogram(counts)


def write_histogram_csv(hist: Histogram, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "count_c0", "count_c1", "count_c2", "count_total"])
        for i, v in enumerate(range(RMIN, RMAX + 1)):
            c = hist.counts[:, i]
            w.writerow([v, *c.tolist(), int(c.sum())])
