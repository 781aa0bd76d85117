"""Model components: extractor, prompt generator/modulator, backbone."""

from .composite import ERMModel, HCVPModel, build_erm, build_extractor, build_hcvp
from .extractor import FeatureExtractor, FrozenContractError
from .hpgn import PromptGenerator, PromptPair
from .pmn import PromptModulator
from .vit import MultiHeadAttention, TransformerBlock, ViTConfig, VisionTransformer

__all__ = [
    "ERMModel",
    "FeatureExtractor",
    "FrozenContractError",
    "HCVPModel",
    "MultiHeadAttention",
    "PromptGenerator",
    "PromptModulator",
    "PromptPair",
    "TransformerBlock",
    "ViTConfig",
    "VisionTransformer",
    "build_erm",
    "build_extractor",
    "build_hcvp",
]
