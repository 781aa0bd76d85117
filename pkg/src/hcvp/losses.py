"""Training objectives: prompt contrastive losses, class-conditioned
contrastive invariance, cross-entropy, and their weighted total.

All contrastive terms share one InfoNCE core: for anchor i and positive j,

    l_ij = -log( exp(s_ij / tau) / sum_{k != i} exp(s_ik / tau) )

where s is the (optionally cosine-normalized) dot-product similarity. The
denominator ranges over every other sample, positives included. Anchors
average over all of their positives; anchors without any positive are
skipped, and a batch in which no anchor has a positive contributes zero
loss and raises ``DegenerateBatchWarning`` instead of producing NaN.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import functional as F
from .autodiff.tensor import Tensor

# big enough to zero the masked entries after exp, small enough to stay finite
_MASK = -1e30


class DegenerateBatchWarning(UserWarning):
    """No anchor in the batch had a positive; the loss contributed zero."""


class NonFiniteLossError(FloatingPointError):
    """A loss component evaluated to NaN or infinity."""


# per-process counters used to verify that disabled losses are never computed
CALL_COUNTS = {"pcl_domain": 0, "pcl_task": 0, "cci": 0, "cls": 0}


def reset_call_counts() -> None:
    for key in CALL_COUNTS:
        CALL_COUNTS[key] = 0


@dataclass(frozen=True)
class SimilarityConfig:
    temperature: float = 0.1
    normalize: bool = True

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


@dataclass(frozen=True)
class LossWeights:
    pcl: float = 0.1
    cci: float = 1.0

    def __post_init__(self):
        if self.pcl < 0 or self.cci < 0:
            raise ValueError(f"loss weights must be >= 0, got pcl={self.pcl} cci={self.cci}")


def _normalize_rows(v: Tensor) -> Tensor:
    norm = (v * v).sum(axis=-1, keepdims=True).sqrt()
    return v / norm


def _info_nce(vectors: Tensor, positive_mask: np.ndarray, cfg: SimilarityConfig) -> Tensor:
    b = vectors.shape[0]
    if b < 2:
        raise ValueError(f"contrastive loss needs a batch of >= 2, got {b}")
    counts = positive_mask.sum(axis=1)
    valid = counts > 0
    dtype = vectors.data.dtype
    if not valid.any():
        warnings.warn("no anchor has a positive sample in this batch", DegenerateBatchWarning)
        return Tensor(np.zeros((), dtype=dtype))
    v = _normalize_rows(vectors) if cfg.normalize else vectors
    sims = (v @ v.transpose((1, 0))) / cfg.temperature
    masked = sims + Tensor(np.eye(b, dtype=dtype) * dtype.type(_MASK))
    lse = F.logsumexp(masked, axis=1, keepdims=True)  # (b, 1)
    pair_losses = lse - sims  # entry (i, j) = l_ij for j != i
    # anchor mean over positives, batch mean over valid anchors, as one
    # constant weight matrix so only `vectors` carries gradient
    weights = np.zeros((b, b), dtype=dtype)
    weights[valid] = positive_mask[valid] / counts[valid, None]
    weights /= valid.sum()
    return (pair_losses * Tensor(weights)).sum()


def _pairwise_equal(values: np.ndarray) -> np.ndarray:
    eq = values[:, None] == values[None, :]
    np.fill_diagonal(eq, False)
    return eq


def pcl_domain(prompts: Tensor, domains: np.ndarray, cfg: SimilarityConfig) -> Tensor:
    """Pull same-domain prompts together against all other batch entries."""
    CALL_COUNTS["pcl_domain"] += 1
    domains = np.asarray(domains)
    return _info_nce(prompts, _pairwise_equal(domains), cfg)


def pcl_task(
    prompts: Tensor, labels: np.ndarray, domains: np.ndarray, cfg: SimilarityConfig
) -> Tensor:
    """Positives share both class and domain with the anchor."""
    CALL_COUNTS["pcl_task"] += 1
    labels = np.asarray(labels)
    domains = np.asarray(domains)
    mask = _pairwise_equal(labels) & _pairwise_equal(domains)
    return _info_nce(prompts, mask, cfg)


def pcl_total(
    domain_prompts: Tensor,
    task_prompts: Tensor,
    labels: np.ndarray,
    domains: np.ndarray,
    cfg: SimilarityConfig,
) -> Tensor:
    """Equal-weight combination of the domain and task prompt losses."""
    domain_part = pcl_domain(domain_prompts, domains, cfg)
    task_part = pcl_task(task_prompts, labels, domains, cfg)
    return domain_part * 0.5 + task_part * 0.5


def cci(embeddings: Tensor, labels: np.ndarray, cfg: SimilarityConfig) -> Tensor:
    """Class-conditioned invariance on class-token embeddings: positives are
    same-class samples regardless of their domain."""
    CALL_COUNTS["cci"] += 1
    labels = np.asarray(labels)
    return _info_nce(embeddings, _pairwise_equal(labels), cfg)


def cls_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of the classification head."""
    CALL_COUNTS["cls"] += 1
    labels = np.asarray(labels)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c}): {labels.min()}..{labels.max()}")
    onehot = np.zeros((b, c), dtype=logits.data.dtype)
    onehot[np.arange(b), labels] = 1.0
    return -(F.log_softmax(logits) * Tensor(onehot)).sum() / b


def total_loss(
    cls_part: Tensor,
    pcl_part: Tensor | None,
    cci_part: Tensor | None,
    weights: LossWeights,
) -> Tensor:
    """Weighted sum ``cls + w_pcl * pcl + w_cci * cci``; omitted parts are
    left out of the graph entirely."""
    for name, part in (("cls", cls_part), ("pcl", pcl_part), ("cci", cci_part)):
        if part is not None and not np.isfinite(part.item()):
            raise NonFiniteLossError(f"loss component '{name}' is not finite: {part.item()}")
    total = cls_part
    if pcl_part is not None:
        total = total + pcl_part * weights.pcl
    if cci_part is not None:
        total = total + cci_part * weights.cci
    return total
