"""Minimal layer library: parameter registration, Linear/Conv2d/LayerNorm."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import functional as F
from .autodiff.tensor import Tensor


class Module:
    """Base class with automatic parameter and submodule registration.

    Assigning a ``Tensor`` attribute registers it as a parameter; assigning
    a ``Module`` or ``ModuleList`` registers a child. ``named_parameters``
    yields dotted names in registration order, which fixes the checkpoint
    manifest order.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, (Module, ModuleList)):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class ModuleList:
    def __init__(self, modules=()):
        self._items = list(modules)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def append(self, module):
        self._items.append(module)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for i, module in enumerate(self._items):
            yield from module.named_parameters(f"{prefix}{i}.")


def _uniform(rng: np.random.Generator, bound: float, shape, dtype) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)


class Linear(Module):
    """Affine map ``x @ weight + bias`` with weight of shape (in, out)."""

    def __init__(
        self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float64
    ):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        bound = 1.0 / np.sqrt(in_features)
        self.weight = _uniform(rng, bound, (in_features, out_features), dtype)
        self.bias = _uniform(rng, bound, (out_features,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            return x @ self.weight + self.bias
        # collapse leading axes so the product runs as one GEMM instead of
        # a loop of per-batch-item ones
        lead = x.shape[:-1]
        flat = x.reshape((-1, self.in_features))
        out = flat @ self.weight + self.bias
        return out.reshape(lead + (self.out_features,))


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        dtype=np.float64,
    ):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = _uniform(
            rng, bound, (out_channels, in_channels, kernel_size, kernel_size), dtype
        )
        self.bias = _uniform(rng, bound, (out_channels,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        out = F.conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        return out + self.bias.reshape((-1, 1, 1))


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, eps=self.eps)
