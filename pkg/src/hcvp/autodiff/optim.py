"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    """A parameter received a NaN or infinite gradient."""


class AdamW:
    """Adam with weight decay applied directly to the parameters.

    The decay term is never folded into the gradient: each step first
    applies the bias-corrected moment update, then shrinks the parameter
    by ``lr * weight_decay`` of its own value.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 3e-4,
        weight_decay: float = 0.01,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient for parameter '{name}'")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * update
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # ------------------------------------------------------------------
    # checkpoint participation
    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state(self, step_count: int, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(step_count)
        for name in self.params:
            self.m[name] = np.array(arrays[f"m.{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"v.{name}"], dtype=np.float64)
