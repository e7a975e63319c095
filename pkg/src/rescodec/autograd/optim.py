"""SGD (with momentum), RMSProp and Adam.

Conventions follow the common deep-learning libraries: SGD momentum is
``v <- m*v + g; w <- w - lr*v``; RMSProp keeps ``s <- a*s + (1-a)*g^2`` and
steps ``lr * g / (sqrt(s) + eps)``; Adam is bias-corrected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    """Raised when a gradient contains NaN or Inf; no parameter is modified."""


@dataclass
class OptimizerState:
    method: str
    learning_rate: float
    buffers: dict = field(default_factory=dict)
    step: int = 0


class Optimizer:
    method = "base"

    def __init__(self, params, lr: float):
        self.params: list[Tensor] = list(params)
        self.state = OptimizerState(self.method, float(lr))

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.learning_rate = float(value)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        """Apply one update. Checks every gradient before touching any parameter."""
        active = [(i, p) for i, p in enumerate(self.params) if p.grad is not None]
        for i, p in active:
            if not np.all(np.isfinite(p.grad)):
                name = p.name or f"param[{i}]"
                raise NonFiniteGradientError(f"non-finite gradient in {name}; update rejected")
        self.state.step += 1
        for i, p in active:
            self._update(i, p)

    def _buffer(self, key, like: np.ndarray) -> np.ndarray:
        buf = self.state.buffers.get(key)
        if buf is None:
            buf = np.zeros_like(like)
            self.state.buffers[key] = buf
        return buf

    def _update(self, i: int, p: Tensor) -> None:  # pragma: no cover - abstract
        raise NotImplementedError


class SGD(Optimizer):
    method = "sgd"

    def __init__(self, params, lr: float, momentum: float = 0.0):
        super().__init__(params, lr)
        self.momentum = momentum

    def _update(self, i, p):
        g = p.grad
        if self.momentum:
            v = self._buffer(("v", i), p.data)
            v *= self.momentum
            v += g
            g = v
        p.data -= (self.lr * g).astype(p.dtype)


class RMSProp(Optimizer):
    method = "rmsprop"

    def __init__(self, params, lr: float, alpha: float = 0.99, eps: float = 1e-8):
        super().__init__(params, lr)
        self.alpha = alpha
        self.eps = eps

    def _update(self, i, p):
        g = p.grad
        s = self._buffer(("sq", i), p.data)
        s *= self.alpha
        s += (1 - self.alpha) * g * g
        p.data -= (self.lr * g / (np.sqrt(s) + self.eps)).astype(p.dtype)


class Adam(Optimizer):
    method = "adam"

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.betas = betas
        self.eps = eps

    def _update(self, i, p):
        b1, b2 = self.betas
        g = p.grad
        m = self._buffer(("m", i), p.data)
        v = self._buffer(("v", i), p.data)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        t = self.state.step
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


def step_decay(base_lr: float, step: int, interval: int, factor: float) -> float:
    """Learning rate after ``step`` iterations with decay by ``factor`` every ``interval``."""
    return base_lr * factor ** (step // interval)


def milestone_decay(base_lr: float, epoch: int, milestones, factor: float) -> float:
    """Learning rate for a 1-based ``epoch``: decayed once per milestone already passed."""
    passed = sum(1 for m in milestones if epoch > m)
    return base_lr * factor**passed
