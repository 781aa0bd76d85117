"""Small frozen conv stack standing in for a pretrained feature encoder."""

from __future__ import annotations

import numpy as np

from ..autodiff.tensor import Tensor
from ..nn import Conv2d, Module


class FrozenContractError(RuntimeError):
    """The extractor was used through `extract` before being frozen."""


class FeatureExtractor(Module):
    """Three stride-2 conv layers (3 -> 16 -> 32 -> 32, 3x3, relu).

    `features` runs in any state and is what pretraining optimizes;
    `extract` is the downstream entry point and demands a frozen encoder,
    so no gradient can ever reach these weights during prompt training.
    """

    channels = (3, 16, 32, 32)

    def __init__(self, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.conv1 = Conv2d(3, 16, 3, rng, stride=2, padding=1, dtype=dtype)
        self.conv2 = Conv2d(16, 32, 3, rng, stride=2, padding=1, dtype=dtype)
        self.conv3 = Conv2d(32, 32, 3, rng, stride=2, padding=1, dtype=dtype)
        self.frozen = False

    def features(self, x: Tensor) -> Tensor:
        h = self.conv1(x).relu()
        h = self.conv2(h).relu()
        h = self.conv3(h).relu()
        return h

    def extract(self, x: Tensor) -> Tensor:
        if not self.frozen:
            raise FrozenContractError("extract() requires a frozen extractor; call freeze() first")
        return self.features(x)

    def freeze(self) -> None:
        self.set_requires_grad(False)
        self.frozen = True
