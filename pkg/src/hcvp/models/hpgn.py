"""Hierarchical prompt generation network.

Two generation heads sit on a frozen feature extractor. The domain head
pools the feature maps globally and runs a small MLP, so its prompt
carries coarse image-wide statistics. The task head re-reads the spatial
feature maps with the domain prompt broadcast-concatenated onto every
position, which makes the task prompt a function of the domain prompt:
gradients flow from the task prompt back into the domain head, forming
the hierarchy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import functional as F
from ..autodiff.tensor import ShapeError, Tensor, concat
from ..nn import Conv2d, Linear, Module
from .extractor import FeatureExtractor


@dataclass
class PromptPair:
    """Per-instance prompt vectors: one coarse (domain-level), one refined
    (task-specific), each a single token of the backbone width."""

    domain: Tensor  # (b, prompt_dim)
    task: Tensor  # (b, prompt_dim)


class PromptGenerator(Module):
    def __init__(
        self,
        extractor: FeatureExtractor,
        rng: np.random.Generator,
        prompt_dim: int = 64,
        hidden: int = 64,
        dtype=np.float64,
    ):
        super().__init__()
        self.extractor = extractor
        self.prompt_dim = prompt_dim
        feat = extractor.channels[-1]
        self.fc1 = Linear(feat, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, prompt_dim, rng, dtype=dtype)
        self.phi1 = Conv2d(feat + prompt_dim, feat, 3, rng, padding=1, dtype=dtype)
        self.phi2 = Conv2d(feat, feat, 3, rng, padding=1, dtype=dtype)
        self.phi_out = Linear(feat, prompt_dim, rng, dtype=dtype)

    def domain_prompt(self, feature_maps: Tensor) -> Tensor:
        pooled = F.global_avg_pool(feature_maps)
        return self.fc2(self.fc1(pooled).relu())

    def task_prompt(self, feature_maps: Tensor, domain_prompt: Tensor) -> Tensor:
        b, _, h, w = feature_maps.shape
        if domain_prompt.shape[0] != b:
            raise ShapeError(
                f"batch mismatch: feature maps {feature_maps.shape} vs "
                f"domain prompt {domain_prompt.shape}"
            )
        spread = domain_prompt.reshape((b, self.prompt_dim, 1, 1)).broadcast_to(
            (b, self.prompt_dim, h, w)
        )
        merged = concat([feature_maps, spread], axis=1)
        refined = self.phi2(self.phi1(merged).relu()).relu()
        return self.phi_out(F.global_avg_pool(refined))

    def generate(self, images: Tensor) -> PromptPair:
        feature_maps = self.extractor.extract(images)
        domain = self.domain_prompt(feature_maps)
        task = self.task_prompt(feature_maps, domain)
        return PromptPair(domain=domain, task=task)
