"""Leave-one-domain-out splits and the stratified batch stream."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synth import ConfigError, Sample


@dataclass(frozen=True)
class SplitPlan:
    """Per-domain 80/20 train/val partition of the source domains; the
    unseen domain is reserved whole for test. Membership is a function of
    (seed, sample index) only, so it survives input reordering."""

    unseen_domain: int
    seed: int
    train_ids: tuple[int, ...]
    val_ids: tuple[int, ...]
    test_ids: tuple[int, ...]


def make_splits(samples: list[Sample], unseen_domain: int, seed: int) -> SplitPlan:
    domains = sorted({s.domain for s in samples})
    if unseen_domain not in domains:
        raise ConfigError(f"unknown unseen domain {unseen_domain}; dataset has {domains}")
    train: list[int] = []
    val: list[int] = []
    test = sorted(s.index for s in samples if s.domain == unseen_domain)
    for domain in domains:
        if domain == unseen_domain:
            continue
        ids = np.array(sorted(s.index for s in samples if s.domain == domain))
        rng = np.random.default_rng(np.random.SeedSequence([seed, 101, domain]))
        perm = rng.permutation(len(ids))
        n_train = int(0.8 * len(ids))
        train.extend(int(i) for i in ids[perm[:n_train]])
        val.extend(int(i) for i in ids[perm[n_train:]])
    return SplitPlan(
        unseen_domain=unseen_domain,
        seed=seed,
        train_ids=tuple(sorted(train)),
        val_ids=tuple(sorted(val)),
        test_ids=tuple(test),
    )


@dataclass
class LabeledBatch:
    images: np.ndarray  # (b, 3, 32, 32) float64
    labels: np.ndarray  # (b,) int64
    domains: np.ndarray  # (b,) int64
    ids: np.ndarray  # (b,) int64


def _gather(samples_by_id: dict[int, Sample], ids: list[int]) -> LabeledBatch:
    chosen = [samples_by_id[i] for i in ids]
    return LabeledBatch(
        images=np.stack([s.image for s in chosen]),
        labels=np.array([s.label for s in chosen], dtype=np.int64),
        domains=np.array([s.domain for s in chosen], dtype=np.int64),
        ids=np.array(ids, dtype=np.int64),
    )


def batches(
    samples: list[Sample],
    ids: tuple[int, ...],
    batch_size: int,
    seed: int,
    epoch: int,
) -> list[LabeledBatch]:
    """One epoch of shuffled batches, deterministic in (seed, epoch).

    Samples are first paired within their (class, domain) cell so the
    contrastive losses see non-empty positive sets, then pairs are dealt
    into batches. A fix-up pass swaps pairs so every batch covers at least
    two domains whenever the split itself does.
    """
    if batch_size < 4 or batch_size % 2 != 0:
        raise ConfigError(f"batch_size must be even and >= 4, got {batch_size}")
    if batch_size > len(ids):
        raise ConfigError(f"batch_size {batch_size} exceeds split size {len(ids)}")
    samples_by_id = {s.index: s for s in samples}
    rng = np.random.default_rng(np.random.SeedSequence([seed, 202, epoch]))

    cells: dict[tuple[int, int], list[int]] = {}
    for i in sorted(ids):
        s = samples_by_id[i]
        cells.setdefault((s.label, s.domain), []).append(i)

    pairs: list[list[int]] = []
    leftovers: list[int] = []
    for key in sorted(cells):
        members = cells[key]
        order = rng.permutation(len(members))
        shuffled = [members[j] for j in order]
        for lo in range(0, len(shuffled) - 1, 2):
            pairs.append([shuffled[lo], shuffled[lo + 1]])
        if len(shuffled) % 2:
            leftovers.append(shuffled[-1])
    order = rng.permutation(len(leftovers))
    leftovers = [leftovers[j] for j in order]
    for lo in range(0, len(leftovers) - 1, 2):
        pairs.append([leftovers[lo], leftovers[lo + 1]])

    order = rng.permutation(len(pairs))
    pairs = [pairs[j] for j in order]

    per_batch = batch_size // 2
    n_batches = len(pairs) // per_batch
    grouped = [pairs[b * per_batch : (b + 1) * per_batch] for b in range(n_batches)]

    def batch_domains(group):
        return {samples_by_id[i].domain for pair in group for i in pair}

    all_domains = {samples_by_id[i].domain for i in ids}
    if len(all_domains) >= 2:
        for bi, group in enumerate(grouped):
            if len(batch_domains(group)) >= 2:
                continue
            swapped = False
            for bj, donor in enumerate(grouped):
                if bj == bi or swapped:
                    continue
                for pj in range(len(donor)):
                    group[0], donor[pj] = donor[pj], group[0]
                    if len(batch_domains(group)) >= 2 and len(batch_domains(donor)) >= 2:
                        swapped = True
                        break
                    group[0], donor[pj] = donor[pj], group[0]  # undo
                if swapped:
                    break

    out = []
    for group in grouped:
        flat = [i for pair in group for i in pair]
        out.append(_gather(samples_by_id, flat))
    return out
