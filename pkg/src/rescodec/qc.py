"""Choosing the base-layer quantization parameter per image.

``optimal_q_search`` is the exhaustive oracle: one lossy encode and one RC
forward pass per ``Q``. The Q-classifier learns to predict that choice
directly from ``x``. Its topology (no normalization layers, so the output
does not depend on the input size)::

    conv5x5/2 + ReLU (3->c1)
    conv5x5/2 + ReLU (c1->c2)
    4 x [conv3x3, ReLU, conv3x3, + skip]   (c2)
    conv5x5/2 (c2->c3)
    4 x [conv3x3, ReLU, conv3x3, + skip]   (c3)
    spatial mean -> linear c3 -> 7
"""

from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import checkpoint
from .autograd.nn import Conv2d, Linear, Module
from .autograd.optim import Adam, milestone_decay
from .lossy.base import Q_CLASSES, compute_residual
from .mixture import nll_bits
from .rc import RcNet, rc_forward

log = logging.getLogger(__name__)

MIN_SIZE = 32


@dataclass
class QcConfig:
    widths: tuple = (64, 128, 256)
    blocks: int = 4
    crop: int = 128
    batch: int = 32
    lr: float = 1e-4
    epochs: int = 11
    milestones: tuple = (5, 10)
    decay: float = 0.25
    crops_per_image: int = 1
    seed: int = 0

    @classmethod
    def paper(cls, **overrides) -> "QcConfig":
        return cls(**overrides)

    @classmethod
    def desk(cls, **overrides) -> "QcConfig":
        base = dict(widths=(16, 32, 64), crop=64, batch=8, lr=1e-3, crops_per_image=4)
        base.update(overrides)
        return cls(**base)


class PlainResBlock(Module):
    def __init__(self, c, rng):
        super().__init__()
        self.conv1 = Conv2d(c, c, 3, rng=rng)
        self.conv2 = Conv2d(c, c, 3, rng=rng)

    def forward(self, x):
        return x + self.conv2(ag.relu(self.conv1(x)))


class QcNet(Module):
    def __init__(self, config: QcConfig | None = None, rng=None):
        super().__init__()
        config = config or QcConfig()
        self.config = config
        rng = np.random.default_rng(config.seed if rng is None else rng)
        c1, c2, c3 = config.widths
        self.conv1 = Conv2d(3, c1, 5, stride=2, rng=rng)
        self.conv2 = Conv2d(c1, c2, 5, stride=2, rng=rng)
        for i in range(config.blocks):
            self.add_module(f"res_a{i}", PlainResBlock(c2, rng))
        self.conv3 = Conv2d(c2, c3, 5, stride=2, rng=rng)
        for i in range(config.blocks):
            self.add_module(f"res_b{i}", PlainResBlock(c3, rng))
        self.fc = Linear(c3, len(Q_CLASSES), rng=rng)

    def forward(self, x):
        f = ag.relu(self.conv1(x))
        f = ag.relu(self.conv2(f))
        for i in range(self.config.blocks):
            f = getattr(self, f"res_a{i}")(f)
        f = self.conv3(f)
        for i in range(self.config.blocks):
            f = getattr(self, f"res_b{i}")(f)
        return self.fc(ag.mean(f, axis=(2, 3)))


def _normalize(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    return (x.transpose(0, 3, 1, 2).astype(np.float32) / 127.5 - 1.0).astype(np.float32)


def qc_forward(x, model: QcNet) -> np.ndarray:
    """Seven logits (one per Q in 11..17) for an ``[H, W, 3]`` image with H, W >= 32."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got {x.shape}")
    if min(x.shape[:2]) < MIN_SIZE:
        raise ValueError(f"Q-classifier needs at least {MIN_SIZE}x{MIN_SIZE} pixels, got {x.shape[:2]}")
    with ag.no_grad():
        return model(ag.Tensor(_normalize(x))).data[0].astype(np.float32)


def predict_q(x, model: QcNet) -> int:
    # np.argmax returns the first maximum, i.e. the smallest Q on ties
    return Q_CLASSES[int(np.argmax(qc_forward(x, model)))]


def save_qc(model: QcNet, path) -> None:
    checkpoint.save(path, model.state_dict())


def load_qc(path_or_state) -> QcNet:
    state = path_or_state if isinstance(path_or_state, dict) else checkpoint.load(path_or_state)
    try:
        widths = (state["conv1.weight"].shape[0], state["conv2.weight"].shape[0], state["conv3.weight"].shape[0])
    except KeyError as exc:
        raise checkpoint.CheckpointError(f"not a Q-classifier checkpoint (missing {exc})") from None
    blocks = 0
    while f"res_a{blocks}.conv1.weight" in state:
        blocks += 1
    model = QcNet(QcConfig(widths=widths, blocks=blocks))
    model.load_state_dict(state)
    return model


# ---------------------------------------------------------------------------
# exhaustive search


class BackendFailure(RuntimeError):
    pass


@dataclass
class QSearchResult:
    q_prime: int
    bits: dict
    lossy_bits: dict
    residual_bits: dict
    forward_calls: int
    best_lossy: object = None
    best_params: object = None

    def bitrate_list(self) -> list:
        return [self.bits[q] for q in Q_CLASSES]


def optimal_q_search(
    x,
    rc: RcNet,
    backend,
    qs: Sequence[int] = Q_CLASSES,
    forward: Callable | None = None,
) -> QSearchResult:
    """Total bits (lossy payload + residual NLL) for every Q; argmin with ties to the smaller Q."""
    x = np.asarray(x)
    forward = forward or rc_forward
    bits, lossy, resid = {}, {}, {}
    calls = 0
    best = None
    for q in qs:
        try:
            lr = backend.compress(x, q)
        except Exception as exc:
            raise BackendFailure(f"lossy backend failed at Q={q}: {exc}") from exc
        params = forward(lr.x_l, rc)
        calls += 1
        r = compute_residual(x, lr.x_l).transpose(2, 0, 1)
        lossy[q] = 8.0 * len(lr.payload)
        resid[q] = nll_bits(r, params)
        bits[q] = lossy[q] + resid[q]
        # strict < keeps the smaller Q on ties (qs ascending)
        if best is None or bits[q] < best[0]:
            best = (bits[q], lr, params)
    q_prime = min(qs, key=lambda q: (bits[q], q))
    return QSearchResult(q_prime, bits, lossy, resid, calls, best[1], best[2])


LABEL_FIELDS = ["image_id", "q_prime"] + [f"bits_q{q}" for q in Q_CLASSES]


def read_label_cache(path) -> dict:
    out = {}
    if not path or not os.path.exists(path):
        return out
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["image_id"]] = (int(row["q_prime"]), [float(row[f"bits_q{q}"]) for q in Q_CLASSES])
    return out


def build_labels(images, ids, rc: RcNet, backend, cache_path=None) -> dict:
    """``image_id -> (Q', [bits per Q])``, reusing and extending a CSV cache."""
    cache = read_label_cache(cache_path)
    for image_id, x in zip(ids, images):
        if image_id in cache:
            continue
        res = optimal_q_search(x, rc, backend)
        cache[image_id] = (res.q_prime, res.bitrate_list())
    if cache_path:
        with open(cache_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LABEL_FIELDS)
            for image_id, (q, bl) in cache.items():
                w.writerow([image_id, q] + [f"{b:.3f}" for b in bl])
    return {i: cache[i] for i in ids}


# ---------------------------------------------------------------------------
# training


def cross_entropy(logits: ag.Tensor, labels: np.ndarray) -> ag.Tensor:
    logp = ag.log_softmax(logits, axis=1)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return ag.sum_(logp * onehot) * (-1.0 / len(labels))


@dataclass
class QcTrainResult:
    model: QcNet
    history: list = field(default_factory=list)


def train_qc(images: Sequence[np.ndarray], q_labels: Sequence[int], config: QcConfig, rng=None) -> QcTrainResult:
    """Cross-entropy training on random crops labelled with each image's Q'.

    Adam; the learning rate for 1-based epoch ``e`` is
    ``lr * decay ** (number of milestones < e)``.
    """
    rng = np.random.default_rng(config.seed if rng is None else rng)
    labels = np.array([Q_CLASSES.index(int(q)) for q in q_labels])
    if len(set(labels.tolist())) <= 1:
        warnings.warn("Q' labels contain a single class; the classifier will be degenerate", RuntimeWarning)
    model = QcNet(config, rng=int(rng.integers(2**31)))
    opt = Adam(model.parameters(), lr=config.lr)
    crop = min([config.crop] + [min(x.shape[:2]) for x in images])
    crop = max(crop, MIN_SIZE)
    history = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        opt.lr = milestone_decay(config.lr, epoch, config.milestones, config.decay)
        order = np.tile(np.arange(len(images)), config.crops_per_image)
        order = order[rng.permutation(order.size)]
        for start in range(0, order.size, config.batch):
            ids = order[start : start + config.batch]
            batch = []
            for i in ids:
                h, w = images[i].shape[:2]
                u = int(rng.integers(0, h - crop + 1))
                v = int(rng.integers(0, w - crop + 1))
                batch.append(images[i][u : u + crop, v : v + crop])
            opt.zero_grad()
            loss = cross_entropy(model(ag.Tensor(_normalize(np.stack(batch)))), labels[ids])
            loss.backward()
            opt.step()
            step += 1
            history.append((epoch, step, float(loss.data), opt.lr))
    return QcTrainResult(model, history)


def within_one_accuracy(model: QcNet, images, q_primes) -> float:
    hits = [abs(predict_q(x, model) - int(q)) <= 1 for x, q in zip(images, q_primes)]
    return float(np.mean(hits)) if hits else math.nan
