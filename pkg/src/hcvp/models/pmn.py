"""Prompt modulation network: one transform block per backbone layer.

Blocks are chained: the pair fed to backbone layer i is block_i applied
to the pair that layer i-1 received (block 0 reads the generator output).
The two prompt paths carry different granularity, so each block keeps
separate weights for them.
"""

from __future__ import annotations

import numpy as np

from ..autodiff.tensor import Tensor
from ..nn import Linear, Module, ModuleList
from .hpgn import PromptPair


class _ModulationBlock(Module):
    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.c_in = Linear(dim, dim, rng, dtype=dtype)
        self.c_out = Linear(dim, dim, rng, dtype=dtype)
        self.p_in = Linear(dim, dim, rng, dtype=dtype)
        self.p_out = Linear(dim, dim, rng, dtype=dtype)

    def __call__(self, c_prev: Tensor, p_prev: Tensor) -> tuple[Tensor, Tensor]:
        c = self.c_out(self.c_in(c_prev).relu())
        p = self.p_out(self.p_in(p_prev).relu())
        return c, p


class PromptModulator(Module):
    def __init__(self, depth: int, dim: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        if depth < 1:
            raise ValueError(f"modulator depth must be >= 1, got {depth}")
        self.depth = depth
        self.dim = dim
        self.blocks = ModuleList([_ModulationBlock(dim, rng, dtype=dtype) for _ in range(depth)])

    def modulate(self, i: int, c_prev: Tensor, p_prev: Tensor) -> tuple[Tensor, Tensor]:
        if not 0 <= i < self.depth:
            raise IndexError(f"modulation block {i} out of range [0, {self.depth})")
        return self.blocks[i](c_prev, p_prev)

    def roll_forward(self, pair: PromptPair) -> list[tuple[Tensor, Tensor]]:
        """Chain all blocks from the generator output; entry i of the result
        is what backbone layer i consumes."""
        out: list[tuple[Tensor, Tensor]] = []
        c, p = pair.domain, pair.task
        for i in range(self.depth):
            c, p = self.modulate(i, c, p)
            out.append((c, p))
        return out
