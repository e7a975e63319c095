"""Layer containers with named parameters."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, default_dtype, maximum, matmul, add

BETA_MIN = 1e-6
GAMMA_MIN = 0.0


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(default_dtype())


class Module:
    """Minimal module: attributes that are Tensors or Modules are registered in order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> None:
        self._modules[name] = module
        object.__setattr__(self, name, module)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data) for n, p in self.named_parameters())

    def load_state_dict(self, state) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=None, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = cin * kernel * kernel
        self.weight = Tensor(he_uniform(rng, (cout, cin, kernel, kernel), fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=default_dtype()), requires_grad=True)

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, kernel=4, stride=2, padding=1, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        if kernel - 2 * padding != stride:
            raise ValueError("transposed conv must upsample by exactly its stride")
        self.stride = stride
        self.padding = padding
        # each output pixel receives (kernel/stride)^2 taps per input channel
        fan_in = cin * (kernel // stride) ** 2
        self.weight = Tensor(he_uniform(rng, (cin, cout, kernel, kernel), fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=default_dtype()), requires_grad=True)

    def forward(self, x):
        return F.conv_transpose2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class GDN(Module):
    """GDN with ``max(., floor)`` reparametrization of beta and gamma."""

    def __init__(self, channels, gamma_init=0.1):
        super().__init__()
        dt = default_dtype()
        self.beta = Tensor(np.ones(channels, dtype=dt), requires_grad=True)
        self.gamma = Tensor((gamma_init * np.eye(channels)).astype(dt), requires_grad=True)

    def effective(self):
        return maximum(self.beta, BETA_MIN), maximum(self.gamma, GAMMA_MIN)

    def forward(self, x):
        beta, gamma = self.effective()
        return F.gdn(x, beta, gamma)


class Linear(Module):
    def __init__(self, cin, cout, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(he_uniform(rng, (cin, cout), cin), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=default_dtype()), requires_grad=True)

    def forward(self, x):
        return add(matmul(x, self.weight), self.bias)
