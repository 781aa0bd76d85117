"""Evaluation harness: unseen-domain accuracy, inter-domain feature
distances, prompt cluster purity, and embedding export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff.tensor import Tensor, no_grad
from .data import Sample, SplitPlan
from .models import ERMModel


class NotApplicableError(RuntimeError):
    """The requested metric does not exist for this model (no prompts)."""


class DomainLeakageError(RuntimeError):
    """A test sample also appears in the training or validation split."""


@dataclass
class DomainDistanceReport:
    """Mean pairwise Euclidean distance between per-domain centroids of
    L2-normalized class-token embeddings over source validation data.

    `class_conditional_mean` restricts centroids to one class at a time and
    averages the per-class means, which discounts label imbalance between
    domains."""

    method: str
    seed: int
    centroids: dict[int, np.ndarray]
    pair_distances: dict[tuple[int, int], float]
    mean_distance: float
    class_conditional_mean: float


def _ordered(samples: list[Sample], ids) -> list[Sample]:
    by_id = {s.index: s for s in samples}
    return [by_id[i] for i in ids]


def forward_embeddings(model, images: np.ndarray, dtype, batch_size: int = 32) -> np.ndarray:
    """Class-token embeddings for a stack of images, inference only."""
    out = []
    with no_grad():
        for lo in range(0, len(images), batch_size):
            x = Tensor(images[lo : lo + batch_size].astype(dtype))
            embedding, _ = model.forward(x)
            out.append(embedding.data.astype(np.float64))
    return np.concatenate(out, axis=0)


def predict(model, images: np.ndarray, dtype, batch_size: int = 32) -> np.ndarray:
    out = []
    with no_grad():
        for lo in range(0, len(images), batch_size):
            x = Tensor(images[lo : lo + batch_size].astype(dtype))
            embedding, _ = model.forward(x)
            out.append(model.classify(embedding).data.argmax(axis=1))
    return np.concatenate(out, axis=0)


def unseen_accuracy(model, cfg, samples: list[Sample], plan: SplitPlan) -> float:
    """Fraction of correct predictions over the whole held-out domain."""
    if plan.unseen_domain != cfg.unseen_domain:
        raise ValueError(
            f"split plan holds out domain {plan.unseen_domain}, "
            f"checkpoint was trained for {cfg.unseen_domain}"
        )
    leaked = set(plan.test_ids) & (set(plan.train_ids) | set(plan.val_ids))
    if leaked:
        raise DomainLeakageError(f"{len(leaked)} test samples appear in train/val: {sorted(leaked)[:5]}")
    test = _ordered(samples, plan.test_ids)
    images = np.stack([s.image for s in test])
    labels = np.array([s.label for s in test])
    preds = predict(model, images, cfg.dtype)
    return float((preds == labels).mean())


def _l2_normalize(features: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    return features / norms


def inter_domain_distance(model, cfg, samples: list[Sample], plan: SplitPlan) -> DomainDistanceReport:
    """Centroid distances across source domains on validation features."""
    val = _ordered(samples, plan.val_ids)
    domains = np.array([s.domain for s in val])
    labels = np.array([s.label for s in val])
    present = sorted(set(domains.tolist()))
    if len(present) < 2:
        raise ValueError(f"need >= 2 source domains, got {present}")
    images = np.stack([s.image for s in val])
    feats = _l2_normalize(forward_embeddings(model, images, cfg.dtype))

    centroids = {d: feats[domains == d].mean(axis=0) for d in present}
    pair_distances: dict[tuple[int, int], float] = {}
    for i, a in enumerate(present):
        for b in present[i + 1 :]:
            pair_distances[(a, b)] = float(np.linalg.norm(centroids[a] - centroids[b]))
    mean_distance = float(np.mean(list(pair_distances.values())))

    per_class = []
    for cls in sorted(set(labels.tolist())):
        mask = labels == cls
        doms_here = sorted(set(domains[mask].tolist()))
        if len(doms_here) < 2:
            continue
        cents = {d: feats[mask & (domains == d)].mean(axis=0) for d in doms_here}
        dists = [
            np.linalg.norm(cents[a] - cents[b])
            for i, a in enumerate(doms_here)
            for b in doms_here[i + 1 :]
        ]
        per_class.append(np.mean(dists))
    class_conditional = float(np.mean(per_class)) if per_class else float("nan")

    return DomainDistanceReport(
        method=model.method,
        seed=cfg.seed,
        centroids=centroids,
        pair_distances=pair_distances,
        mean_distance=mean_distance,
        class_conditional_mean=class_conditional,
    )


def knn_purity(vectors: np.ndarray, labels: np.ndarray) -> float:
    """Leave-one-out 1-nearest-neighbor label agreement."""
    n = len(vectors)
    sq = (vectors * vectors).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (vectors @ vectors.T)
    np.fill_diagonal(d2, np.inf)
    nearest = d2.argmin(axis=1)
    return float((labels[nearest] == labels).mean())


def prompt_vectors(model, images: np.ndarray, dtype, batch_size: int = 32):
    """Domain and task prompt matrices for a stack of images."""
    if isinstance(model, ERMModel) or not hasattr(model, "generator"):
        raise NotApplicableError("prompt metrics need an HCVP model; this checkpoint has no prompts")
    cs, ps = [], []
    with no_grad():
        for lo in range(0, len(images), batch_size):
            x = Tensor(images[lo : lo + batch_size].astype(dtype))
            pair = model.generator.generate(x)
            cs.append(pair.domain.data.astype(np.float64))
            ps.append(pair.task.data.astype(np.float64))
    return np.concatenate(cs), np.concatenate(ps)


def prompt_cluster_score(model, cfg, samples: list[Sample], ids) -> dict[str, float]:
    """1-NN purity of domain prompts against domain ids, and of task
    prompts against (class, domain) pairs, on held-out data."""
    chosen = _ordered(samples, ids)
    images = np.stack([s.image for s in chosen])
    domains = np.array([s.domain for s in chosen])
    labels = np.array([s.label for s in chosen])
    c_vecs, p_vecs = prompt_vectors(model, images, cfg.dtype)
    n_domains = int(domains.max()) + 1
    task_key = labels * n_domains + domains
    return {
        "domain_purity": knn_purity(c_vecs, domains),
        "task_purity": knn_purity(p_vecs, task_key),
    }


def export_embeddings(
    model, cfg, samples: list[Sample], ids, path: Path, kind: str = "class-token"
) -> Path:
    """One CSV row per sample: feature vector, class, domain. 9 significant
    digits; re-exports are byte-identical."""
    chosen = _ordered(samples, ids)
    images = np.stack([s.image for s in chosen])
    if kind == "class-token":
        vecs = forward_embeddings(model, images, cfg.dtype)
    elif kind in ("domain-prompt", "task-prompt"):
        c_vecs, p_vecs = prompt_vectors(model, images, cfg.dtype)
        vecs = c_vecs if kind == "domain-prompt" else p_vecs
    else:
        raise ValueError(f"unknown embedding kind {kind!r}")
    path = Path(path)
    dim = vecs.shape[1]
    header = ",".join([f"f{i}" for i in range(dim)] + ["class", "domain"])
    lines = [header]
    for vec, s in zip(vecs, chosen):
        parts = [f"{v:.9g}" for v in vec] + [str(s.label), str(s.domain)]
        lines.append(",".join(parts))
    path.write_text("\n".join(lines) + "\n")
    return path
