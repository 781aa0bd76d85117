"""Brute-force loss oracles: direct summation over (anchor, positive,
negative) triples with plain ``math`` calls, sharing no code with the
graph-based implementations in :mod:`hcvp.losses`."""

from __future__ import annotations

import math

import numpy as np


def _maybe_normalize(vectors: np.ndarray, normalize: bool) -> np.ndarray:
    if not normalize:
        return np.asarray(vectors, dtype=np.float64)
    v = np.asarray(vectors, dtype=np.float64)
    out = np.empty_like(v)
    for i in range(v.shape[0]):
        n = math.sqrt(sum(x * x for x in v[i]))
        out[i] = v[i] / n
    return out


def info_nce_oracle(
    vectors: np.ndarray,
    positive_sets: list[list[int]],
    temperature: float,
    normalize: bool,
) -> tuple[float, bool]:
    """Returns (loss, degenerate). Loops over every (i, j, k) explicitly."""
    v = _maybe_normalize(vectors, normalize)
    b = v.shape[0]
    anchor_losses = []
    for i in range(b):
        positives = positive_sets[i]
        if not positives:
            continue
        denom = 0.0
        for k in range(b):
            if k == i:
                continue
            denom += math.exp(float(np.dot(v[i], v[k])) / temperature)
        pair_losses = []
        for j in positives:
            numer = math.exp(float(np.dot(v[i], v[j])) / temperature)
            pair_losses.append(-math.log(numer / denom))
        anchor_losses.append(sum(pair_losses) / len(pair_losses))
    if not anchor_losses:
        return 0.0, True
    return sum(anchor_losses) / len(anchor_losses), False


def pcl_domain_oracle(prompts, domains, temperature, normalize) -> tuple[float, bool]:
    domains = list(domains)
    b = len(domains)
    pos = [[j for j in range(b) if j != i and domains[j] == domains[i]] for i in range(b)]
    return info_nce_oracle(prompts, pos, temperature, normalize)


def pcl_task_oracle(prompts, labels, domains, temperature, normalize) -> tuple[float, bool]:
    labels = list(labels)
    domains = list(domains)
    b = len(labels)
    pos = [
        [j for j in range(b) if j != i and labels[j] == labels[i] and domains[j] == domains[i]]
        for i in range(b)
    ]
    return info_nce_oracle(prompts, pos, temperature, normalize)


def cci_oracle(embeddings, labels, temperature, normalize) -> tuple[float, bool]:
    labels = list(labels)
    b = len(labels)
    pos = [[j for j in range(b) if j != i and labels[j] == labels[i]] for i in range(b)]
    return info_nce_oracle(embeddings, pos, temperature, normalize)


def cross_entropy_oracle(logits, labels) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    total = 0.0
    for row, label in zip(logits, labels):
        m = max(row)
        z = sum(math.exp(x - m) for x in row)
        total += -(row[int(label)] - m - math.log(z))
    return total / len(labels)
