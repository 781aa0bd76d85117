"""Tiny vision transformer with per-layer prompt slots.

Sequence layout in prompted mode is fixed as [class, domain-prompt,
task-prompt, patches] at every layer. A layer's own outputs at the two
prompt positions are discarded; the next layer's prompts always come from
the modulation network. Without prompts the model runs a plain
[class, patches] sequence. Prompts participate in attention as ordinary
tokens (no masking) and receive no positional embedding; positional
embeddings are added to patch tokens only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import functional as F
from ..autodiff.tensor import Tensor, concat
from ..nn import LayerNorm, Linear, Module, ModuleList


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 32
    patch_size: int = 4
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 2
    num_classes: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.dim = dim
        self.qkv = Linear(dim, 3 * dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor, need_weights: bool = False):
        if not need_weights:
            return F.multi_head_attention(
                x, self.qkv.weight, self.qkv.bias, self.proj.weight, self.proj.bias, self.heads
            )
        # composed from primitives; used where the attention matrix itself
        # is inspected. Must agree with the fused kernel.
        b, t, d = x.shape
        qkv = self.qkv(x)
        heads, hd = self.heads, self.head_dim

        def split(start):
            part = qkv.narrow(2, start, d)
            return part.reshape((b, t, heads, hd)).transpose((0, 2, 1, 3))

        q, k, v = split(0), split(d), split(2 * d)
        scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / float(np.sqrt(hd)))
        attn = F.softmax(scores, axis=-1)
        out = (attn @ v).transpose((0, 2, 1, 3)).reshape((b, t, d))
        return self.proj(out), attn


class TransformerBlock(Module):
    """Pre-norm block: attention and MLP sublayers with residuals."""

    def __init__(
        self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator, dtype=np.float64
    ):
        super().__init__()
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.fc1 = Linear(dim, mlp_ratio * dim, rng, dtype=dtype)
        self.fc2 = Linear(mlp_ratio * dim, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return F.transformer_block(
            x,
            self.ln1.gamma,
            self.ln1.beta,
            self.attn.qkv.weight,
            self.attn.qkv.bias,
            self.attn.proj.weight,
            self.attn.proj.bias,
            self.ln2.gamma,
            self.ln2.beta,
            self.fc1.weight,
            self.fc1.bias,
            self.fc2.weight,
            self.fc2.bias,
            self.attn.heads,
        )

    def composed(self, x: Tensor) -> Tensor:
        """The same block assembled from individual primitives (must agree
        with the fused kernel; kept for verification and introspection)."""
        x = x + self.attn(self.ln1(x))
        x = x + self.fc2(F.gelu(self.fc1(self.ln2(x))))
        return x


class VisionTransformer(Module):
    def __init__(self, config: ViTConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.config = config
        d = config.embed_dim
        patch_dim = 3 * config.patch_size * config.patch_size
        self.patch_proj = Linear(patch_dim, d, rng, dtype=dtype)
        self.pos_embed = Tensor(
            rng.normal(0.0, 0.02, (config.num_patches, d)).astype(dtype), requires_grad=True
        )
        self.cls_token = Tensor(
            rng.normal(0.0, 0.02, (1, 1, d)).astype(dtype), requires_grad=True
        )
        self.blocks = ModuleList(
            [
                TransformerBlock(d, config.heads, config.mlp_ratio, rng, dtype=dtype)
                for _ in range(config.depth)
            ]
        )
        self.ln_f = LayerNorm(d, dtype=dtype)
        self.head = Linear(d, config.num_classes, rng, dtype=dtype)

    # ------------------------------------------------------------------
    def patchify(self, images: Tensor) -> Tensor:
        """Non-overlapping patches, linearly projected, plus positions."""
        cfg = self.config
        b = images.shape[0]
        if images.shape[1:] != (3, cfg.image_size, cfg.image_size):
            raise ValueError(
                f"expected images of shape (b, 3, {cfg.image_size}, {cfg.image_size}), "
                f"got {images.shape}"
            )
        g = cfg.image_size // cfg.patch_size
        ps = cfg.patch_size
        patches = (
            images.reshape((b, 3, g, ps, g, ps))
            .transpose((0, 2, 4, 1, 3, 5))
            .reshape((b, g * g, 3 * ps * ps))
        )
        return self.patch_proj(patches) + self.pos_embed

    def layer_forward(
        self, i: int, x: Tensor, c: Tensor, p: Tensor, e: Tensor
    ) -> tuple[Tensor, Tensor]:
        """Run block i over [x, C, P, E]; the prompt outputs are dropped."""
        if not 0 <= i < self.config.depth:
            raise IndexError(f"layer {i} out of range [0, {self.config.depth})")
        b, d = c.shape
        n = e.shape[1]
        seq = concat([x, c.reshape((b, 1, d)), p.reshape((b, 1, d)), e], axis=1)
        out = self.blocks[i](seq)
        return out.narrow(1, 0, 1), out.narrow(1, 3, n)

    def forward(self, images: Tensor, prompts: list[tuple[Tensor, Tensor]] | None = None) -> Tensor:
        """Final class-token embedding; `prompts` supplies one (C, P) pair
        per layer, or None for the prompt-free configuration."""
        cfg = self.config
        b = images.shape[0]
        e = self.patchify(images)
        x = self.cls_token.broadcast_to((b, 1, cfg.embed_dim))
        if prompts is None:
            seq = concat([x, e], axis=1)
            for block in self.blocks:
                seq = block(seq)
            x = seq.narrow(1, 0, 1)
        else:
            if len(prompts) != cfg.depth:
                raise ValueError(f"expected {cfg.depth} prompt pairs, got {len(prompts)}")
            for i, (c, p) in enumerate(prompts):
                x, e = self.layer_forward(i, x, c, p, e)
        return self.ln_f(x.reshape((b, cfg.embed_dim)))

    def classify(self, class_embedding: Tensor) -> Tensor:
        return self.head(class_embedding)
