"""Assembled models and seeded builders."""

from __future__ import annotations

import numpy as np

from ..autodiff.tensor import Tensor
from .extractor import FeatureExtractor
from .hpgn import PromptGenerator, PromptPair
from .pmn import PromptModulator
from .vit import ViTConfig, VisionTransformer


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 777, stream]))


class HCVPModel:
    """Prompt generator + modulator + prompted backbone.

    The modulator must supply exactly one prompt pair per backbone layer;
    assembling mismatched depths is an error.
    """

    method = "hcvp"

    def __init__(
        self,
        generator: PromptGenerator,
        modulator: PromptModulator,
        backbone: VisionTransformer,
    ):
        if modulator.depth != backbone.config.depth:
            raise ValueError(
                f"modulator depth {modulator.depth} != backbone depth {backbone.config.depth}"
            )
        if modulator.dim != backbone.config.embed_dim:
            raise ValueError(
                f"modulator width {modulator.dim} != backbone width {backbone.config.embed_dim}"
            )
        self.generator = generator
        self.modulator = modulator
        self.backbone = backbone

    def param_dict(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update({f"hpgn.{k}": v for k, v in self.generator.named_parameters()})
        out.update({f"pmn.{k}": v for k, v in self.modulator.named_parameters()})
        out.update({f"vit.{k}": v for k, v in self.backbone.named_parameters()})
        return out

    def trainable_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.param_dict().items() if v.requires_grad}

    def forward(self, images: Tensor) -> tuple[Tensor, PromptPair]:
        pair = self.generator.generate(images)
        prompts = self.modulator.roll_forward(pair)
        return self.backbone.forward(images, prompts), pair

    def classify(self, class_embedding: Tensor) -> Tensor:
        return self.backbone.classify(class_embedding)


class ERMModel:
    """Prompt-free baseline: the same backbone on a [class, patches] sequence."""

    method = "erm"

    def __init__(self, backbone: VisionTransformer):
        self.backbone = backbone

    def param_dict(self) -> dict[str, Tensor]:
        return {f"vit.{k}": v for k, v in self.backbone.named_parameters()}

    def trainable_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.param_dict().items() if v.requires_grad}

    def forward(self, images: Tensor) -> tuple[Tensor, None]:
        return self.backbone.forward(images, None), None

    def classify(self, class_embedding: Tensor) -> Tensor:
        return self.backbone.classify(class_embedding)


def build_hcvp(
    vit_config: ViTConfig, extractor: FeatureExtractor, seed: int, dtype=np.float64
) -> HCVPModel:
    generator = PromptGenerator(
        extractor, _rng(seed, 1), prompt_dim=vit_config.embed_dim, dtype=dtype
    )
    modulator = PromptModulator(vit_config.depth, vit_config.embed_dim, _rng(seed, 2), dtype=dtype)
    backbone = VisionTransformer(vit_config, _rng(seed, 3), dtype=dtype)
    return HCVPModel(generator, modulator, backbone)


def build_erm(vit_config: ViTConfig, seed: int, dtype=np.float64) -> ERMModel:
    return ERMModel(VisionTransformer(vit_config, _rng(seed, 3), dtype=dtype))


def build_extractor(seed: int, dtype=np.float64) -> FeatureExtractor:
    return FeatureExtractor(_rng(seed, 0), dtype=dtype)
