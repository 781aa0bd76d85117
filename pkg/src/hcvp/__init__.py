"""Hierarchical contrastive visual prompts for domain generalization,
desk scale: generative per-instance prompts modulated into a tiny vision
transformer, trained with prompt-contrastive and class-conditioned
invariance losses against an ERM baseline on a synthetic multi-domain
dataset."""

__version__ = "0.1.0"
