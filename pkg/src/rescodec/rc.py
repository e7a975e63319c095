"""Residual compressor: ``x_l`` -> mixture parameters of ``p(r | x_l)``.

Topology (``cf`` features, ``N`` residual blocks, ``K`` components)::

    x_l/127.5 - 1 -> head conv5x5 (3->cf) ---------------------------+
                  -> conv3x3 stride 2                                |
                  -> N x [conv3x3 -> GDN -> conv3x3, + skip]          |
                  -> transposed conv4x4 stride 2 (back to H x W)      |
                  -> concat with head features <----------------------+
                  -> conv1x1 (2cf->cf)
                  -> 4 tails, each conv1x1 -> ReLU -> conv1x1 (cf->3K)

The tails give pi-logits, mu, raw sigma and lambda, one map per
(component, channel) at channel index ``3*k + c``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import checkpoint
from .autograd.functional import reflect_pad_to_even
from .autograd.nn import GDN, Conv2d, ConvTranspose2d, Module
from .autograd.optim import RMSProp, Adam, NonFiniteGradientError, step_decay
from .lossy.base import compute_residual
from .mixture import SIGMA_MIN, MixtureParams, mixture_nll_bits

log = logging.getLogger(__name__)

TRAIN_Q = (12, 13, 14)
MAX_PIXELS = 2_250_000


@dataclass
class RcConfig:
    cf: int = 128
    num_blocks: int = 16
    k: int = 5
    crop: int = 128
    batch: int = 16
    lr: float = 5e-5
    lr_decay: float = 0.75
    decay_interval: int = 100_000
    optimizer: str = "rmsprop"
    epochs: int = 50
    max_steps: int = 0
    val_interval: int = 100
    seed: int = 0
    max_pixels: int = MAX_PIXELS
    train_q: tuple = TRAIN_Q

    def __post_init__(self):
        if isinstance(self.train_q, str):
            self.train_q = tuple(int(t) for t in self.train_q.replace(",", " ").split())
        self.train_q = tuple(int(q) for q in self.train_q)
        if self.cf < 8 or self.num_blocks < 1 or self.k < 1:
            raise ValueError("RcConfig needs cf >= 8, num_blocks >= 1, k >= 1")
        if self.optimizer not in ("rmsprop", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def paper(cls, **overrides) -> "RcConfig":
        return cls(**overrides)

    @classmethod
    def desk(cls, **overrides) -> "RcConfig":
        base = dict(cf=32, num_blocks=4, crop=64, batch=8, lr=1e-3, optimizer="adam",
                    decay_interval=2000, epochs=40, val_interval=50)
        base.update(overrides)
        return cls(**base)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(t) for t in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **extra) -> "RcConfig":
        """Build a config from ``key=value`` text; unknown keys are ignored (they may belong to the driver)."""
        kv = parse_kv(text)
        preset = kv.pop("preset", "paper")
        defaults = cls()
        known = {}
        for f in fields(cls):
            if f.name in kv:
                raw = kv[f.name]
                known[f.name] = raw if f.name == "train_q" else _coerce(raw, getattr(defaults, f.name))
        known.update(extra)
        return cls.desk(**known) if preset == "desk" else cls.paper(**known)


def parse_kv(text: str) -> dict:
    """Plain ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(value: str, default):
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(float(value))
    if isinstance(default, float):
        return float(value)
    return value


# ---------------------------------------------------------------------------
# network


class ResBlock(Module):
    def __init__(self, cf, rng):
        super().__init__()
        self.conv1 = Conv2d(cf, cf, 3, rng=rng)
        self.gdn = GDN(cf)
        self.conv2 = Conv2d(cf, cf, 3, rng=rng)

    def forward(self, x):
        return x + self.conv2(self.gdn(self.conv1(x)))


class Tail(Module):
    def __init__(self, cf, cout, rng):
        super().__init__()
        self.conv1 = Conv2d(cf, cf, 1, rng=rng)
        self.conv2 = Conv2d(cf, cout, 1, rng=rng)

    def forward(self, x):
        return self.conv2(ag.relu(self.conv1(x)))


TAILS = ("pi", "mu", "sigma", "lam")
TAIL_INIT_SCALE = 0.1


class RcNet(Module):
    def __init__(self, config: RcConfig, rng=None):
        super().__init__()
        rng = np.random.default_rng(config.seed if rng is None else rng)
        cf, k = config.cf, config.k
        self.config = config
        self.head = Conv2d(3, cf, 5, rng=rng)
        self.down = Conv2d(cf, cf, 3, stride=2, padding=1, rng=rng)
        for i in range(config.num_blocks):
            self.add_module(f"block{i}", ResBlock(cf, rng))
        self.up = ConvTranspose2d(cf, cf, 4, 2, 1, rng=rng)
        self.merge = Conv2d(2 * cf, cf, 1, rng=rng)
        for name in TAILS:
            self.add_module(f"tail_{name}", Tail(cf, 3 * k, rng))
        # start near a flat mixture with sigma ~ 1 instead of random large outputs
        for name in TAILS:
            getattr(self, f"tail_{name}").conv2.weight.data *= TAIL_INIT_SCALE
        self.tail_sigma.conv2.bias.data[:] = math.log(math.expm1(1.0))

    def forward(self, x):
        """``x``: normalized input ``[B, 3, H, W]`` with even H, W. Returns the four raw maps ``[B, K, 3, H, W]``."""
        f_in = self.head(x)
        f = self.down(f_in)
        for i in range(self.config.num_blocks):
            f = getattr(self, f"block{i}")(f)
        f = self.up(f)
        f = self.merge(ag.concat([f_in, f], axis=1))
        b, _, h, w = x.shape
        k = self.config.k
        return tuple(ag.reshape(getattr(self, f"tail_{n}")(f), (b, k, 3, h, w)) for n in TAILS)


def normalize_input(x_l) -> np.ndarray:
    """``[H, W, 3]`` or ``[B, H, W, 3]`` uint8 -> ``[B, 3, H, W]`` in [-1, 1]."""
    x = np.asarray(x_l)
    if x.ndim == 3:
        x = x[None]
    return (x.transpose(0, 3, 1, 2).astype(ag.default_dtype()) / 127.5 - 1.0).astype(ag.default_dtype())


def heads_to_params(logits, mu, sigma_raw, lam) -> tuple:
    """Activations on the raw tail maps: sigma = softplus + SIGMA_MIN."""
    sigma = ag.softplus(sigma_raw) + SIGMA_MIN
    return logits, mu, sigma, lam


class ImageTooLargeError(ValueError):
    pass


def rc_forward(x_l, model: RcNet, max_pixels: int | None = None) -> MixtureParams:
    """Mixture parameters ``[K, 3, H, W]`` (float32) for one image ``[H, W, 3]``."""
    x_l = np.asarray(x_l)
    h, w = x_l.shape[:2]
    limit = model.config.max_pixels if max_pixels is None else max_pixels
    if limit and h * w > limit:
        raise ImageTooLargeError(
            f"{h}x{w} image exceeds the {limit}-pixel limit; encode it with the 4-crop path"
        )
    x = normalize_input(x_l)
    x, ph, pw = reflect_pad_to_even(x)
    with ag.no_grad():
        logits, mu, sigma, lam = heads_to_params(*model(ag.Tensor(x)))
    logits, mu, sigma, lam = (t.data[0, :, :, :h, :w] for t in (logits, mu, sigma, lam))
    pi = ag.softmax_array(logits.astype(np.float64), axis=0).astype(np.float32)
    return MixtureParams(pi, mu.astype(np.float32), sigma.astype(np.float32), lam.astype(np.float32))


def batch_loss(model: RcNet, x_l_batch: np.ndarray, r_batch: np.ndarray) -> ag.Tensor:
    """Mean bits per subpixel of ``r_batch`` (``[B, 3, H, W]``) given ``x_l_batch`` (``[B, H, W, 3]``)."""
    maps = heads_to_params(*model(ag.Tensor(normalize_input(x_l_batch))))
    bits = mixture_nll_bits(*maps, r_batch, kaxis=1)
    return bits * (1.0 / r_batch.size)


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: RcNet, path) -> None:
    checkpoint.save(path, model.state_dict())


def config_from_state(state) -> RcConfig:
    try:
        cf = state["head.weight"].shape[0]
        k = state["tail_pi.conv2.weight"].shape[0] // 3
    except KeyError as exc:
        raise checkpoint.CheckpointError(f"not an RC checkpoint (missing {exc})") from None
    blocks = 0
    while f"block{blocks}.conv1.weight" in state:
        blocks += 1
    return RcConfig(cf=cf, num_blocks=blocks, k=k)


def load_model(path_or_state, max_pixels: int = MAX_PIXELS) -> RcNet:
    state = path_or_state if isinstance(path_or_state, dict) else checkpoint.load(path_or_state)
    cfg = config_from_state(state)
    cfg.max_pixels = max_pixels
    model = RcNet(cfg)
    model.load_state_dict(state)
    return model


def model_fingerprint(model: RcNet) -> int:
    return checkpoint.fingerprint(model.state_dict())


# ---------------------------------------------------------------------------
# training


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainSample:
    """One training image with its base layers, precomputed once per Q."""

    image_id: str
    x: np.ndarray
    x_l: dict = field(default_factory=dict)

    def residual(self, q: int) -> np.ndarray:
        return compute_residual(self.x, self.x_l[q]).transpose(2, 0, 1)


def prepare_samples(images: Sequence[np.ndarray], backend, qs=TRAIN_Q, ids=None) -> list[TrainSample]:
    ids = ids or [f"img{i:04d}" for i in range(len(images))]
    out = []
    for image_id, x in zip(ids, images):
        s = TrainSample(image_id, np.asarray(x))
        for q in qs:
            s.x_l[q] = backend.compress(s.x, q).x_l
        out.append(s)
    return out


def random_crop(sample: TrainSample, q: int, size: int, rng) -> tuple[np.ndarray, np.ndarray]:
    h, w = sample.x.shape[:2]
    size = min(size, h - h % 2, w - w % 2)
    u = int(rng.integers(0, h - size + 1))
    v = int(rng.integers(0, w - size + 1))
    xl = sample.x_l[q][u : u + size, v : v + size]
    r = sample.residual(q)[:, u : u + size, v : v + size]
    return xl, r


def evaluate_bpsp(model: RcNet, samples: Sequence[TrainSample], qs=TRAIN_Q) -> float:
    """Mean model bpsp over whole validation images; image ``i`` uses ``qs[i % len(qs)]``."""
    from .mixture import nll_bits

    bits = 0.0
    n = 0
    for i, s in enumerate(samples):
        q = qs[i % len(qs)]
        params = rc_forward(s.x_l[q], model, max_pixels=0)
        r = s.residual(q)
        bits += nll_bits(r, params)
        n += r.size
    return bits / max(n, 1)


@dataclass
class TrainResult:
    model: RcNet
    history: list
    best_val: float
    best_step: int


def _param_norms(model: RcNet) -> dict:
    return {n: float(np.linalg.norm(p.data)) for n, p in model.named_parameters()}


def train_rc(
    train: Sequence[TrainSample],
    config: RcConfig,
    val: Sequence[TrainSample] = (),
    metrics_path=None,
    checkpoint_path=None,
    model: RcNet | None = None,
    rng=None,
) -> TrainResult:
    """Train on random crops; each image draws its Q from ``config.train_q`` every epoch.

    One epoch visits every training image once (one random crop each).
    Validation runs every ``config.val_interval`` steps and at the end; the
    best validation weights are returned (and written to ``checkpoint_path``).
    """
    rng = np.random.default_rng(config.seed if rng is None else rng)
    model = model or RcNet(config, rng=int(rng.integers(2**31)))
    opt_cls = RMSProp if config.optimizer == "rmsprop" else Adam
    opt = opt_cls(model.parameters(), lr=config.lr)
    for name, p in model.named_parameters():
        p.name = name
    sizes = [min(s.x.shape[0], s.x.shape[1]) for s in train]
    crop = min([config.crop] + [sz - sz % 2 for sz in sizes])
    if crop < config.crop:
        log.warning("crop reduced to %d to fit the smallest training image", crop)
    history = []
    best = (math.inf, -1, None)
    writer = None
    fh = None
    if metrics_path:
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss_bpsp", "lr", "val_bpsp"])

    def validate(step):
        nonlocal best
        if not val:
            return None
        v = evaluate_bpsp(model, val, config.train_q)
        if v < best[0]:
            best = (v, step, {k: a.copy() for k, a in model.state_dict().items()})
            if checkpoint_path:
                checkpoint.save(checkpoint_path, best[2])
        return v

    step = 0
    total_steps = config.max_steps or config.epochs * math.ceil(len(train) / config.batch)
    try:
        while step < total_steps:
            order = rng.permutation(len(train))
            qs = rng.choice(config.train_q, size=len(train))
            for start in range(0, len(order), config.batch):
                if step >= total_steps:
                    break
                ids = order[start : start + config.batch]
                crops = [random_crop(train[i], int(qs[i]), crop, rng) for i in ids]
                xl = np.stack([c[0] for c in crops])
                r = np.stack([c[1] for c in crops])
                opt.lr = step_decay(config.lr, step, config.decay_interval, config.lr_decay)
                opt.zero_grad()
                loss = batch_loss(model, xl, r)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingDivergedError(_diagnostic("non-finite loss", step, ids, train, model))
                loss.backward()
                try:
                    opt.step()
                except NonFiniteGradientError as exc:
                    raise TrainingDivergedError(_diagnostic(str(exc), step, ids, train, model)) from None
                step += 1
                v = validate(step) if config.val_interval and step % config.val_interval == 0 else None
                history.append((step, value, opt.lr, v))
                if writer:
                    writer.writerow([step, f"{value:.6f}", f"{opt.lr:.6g}", "" if v is None else f"{v:.6f}"])
                    fh.flush()
        if val and (not history or history[-1][3] is None):
            v = validate(step)
            if history:
                history[-1] = history[-1][:3] + (v,)
    finally:
        if fh:
            fh.close()
    if best[2] is not None:
        model.load_state_dict(best[2])
    elif checkpoint_path:
        checkpoint.save(checkpoint_path, model.state_dict())
    return TrainResult(model, history, best[0], best[1])


def _diagnostic(reason, step, ids, train, model) -> str:
    norms = _param_norms(model)
    worst = sorted(norms.items(), key=lambda kv: -kv[1] if math.isfinite(kv[1]) else -math.inf)[:5]
    bad = [n for n, v in norms.items() if not math.isfinite(v)]
    batch = [train[i].image_id for i in ids]
    return f"{reason} at step {step}; batch={batch}; non-finite params={bad}; largest norms={worst}"
