"""Whole-model gradient verification against finite differences."""

from __future__ import annotations

import numpy as np

from . import losses
from .autodiff import Tensor
from .autodiff.gradcheck import GradcheckReport, gradcheck
from .losses import LossWeights, SimilarityConfig
from .models import ViTConfig, build_extractor, build_hcvp


def full_graph_gradcheck(
    seed: int = 0, batch: int = 4, max_coords: int = 4
) -> GradcheckReport:
    """Gradcheck the complete training loss (classification + prompt
    contrastive + class-conditioned invariance) of a float64 model on a
    small batch, sampling a few coordinates of every trainable tensor."""
    rng = np.random.default_rng(seed)
    extractor = build_extractor(seed, dtype=np.float64)
    extractor.freeze()
    model = build_hcvp(ViTConfig(), extractor, seed, dtype=np.float64)
    images = Tensor(rng.random((batch, 3, 32, 32)))
    # paired classes and domains so every contrastive term has positives
    pattern = np.repeat(np.arange((batch + 1) // 2), 2)[:batch]
    labels = pattern % ViTConfig().num_classes
    domains = pattern % 4
    sim = SimilarityConfig()
    weights = LossWeights()

    def build_loss() -> Tensor:
        embedding, pair = model.forward(images)
        logits = model.classify(embedding)
        return losses.total_loss(
            losses.cls_loss(logits, labels),
            losses.pcl_total(pair.domain, pair.task, labels, domains, sim),
            losses.cci(embedding, labels, sim),
            weights,
        )

    wrt = model.trainable_params()
    return gradcheck(build_loss, wrt, max_coords=max_coords, rng=np.random.default_rng(seed + 1))
