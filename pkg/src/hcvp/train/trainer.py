"""End-to-end training: extractor pretraining, the optimization loop,
training-domain validation with best-checkpoint selection, metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import losses
from ..autodiff import AdamW
from ..autodiff import functional as F
from ..autodiff.tensor import Tensor, no_grad
from ..data import LabeledBatch, Sample, SplitPlan, batches, generate, make_splits
from ..losses import DegenerateBatchWarning, LossWeights, SimilarityConfig
from ..models import FeatureExtractor, build_extractor, build_hcvp
from ..nn import Linear
from ..runtime import limit_blas_threads, tune_allocator
from .checkpoint import build_model_for, save_checkpoint
from .config import TrainConfig, derive_seed
from .metrics import MetricsWriter

_PRETRAIN_STREAM = 11
_HEAD_STREAM = 12


class TrainingAbortedError(FloatingPointError):
    """Training hit a non-finite loss or gradient."""


@dataclass
class TrainResult:
    config: TrainConfig
    best_step: int
    best_val_accuracy: float
    final_train_accuracy: float
    records: list[dict] = field(repr=False)
    checkpoint_path: Path | None
    plan: SplitPlan


def resolve_samples(cfg: TrainConfig) -> list[Sample]:
    """The sample list a config trains on: loaded from its data directory
    when one is set, regenerated from the dataset config otherwise."""
    if cfg.data_dir is not None:
        from ..data import load_dataset

        splits, _ = load_dataset(Path(cfg.data_dir))
        if "all" not in splits:
            raise ValueError(f"dataset directory {cfg.data_dir} has no 'all' split")
        return splits["all"]
    return generate(cfg.dataset)


def pretrain_extractor(
    samples: list[Sample], plan: SplitPlan, cfg: TrainConfig
) -> FeatureExtractor:
    """Train the conv stack as a plain classifier on pooled source data for
    a fixed number of steps (with a throwaway linear head), then freeze it."""
    dtype = cfg.dtype
    extractor = build_extractor(cfg.seed, dtype=dtype)
    head_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _HEAD_STREAM]))
    head = Linear(extractor.channels[-1], cfg.dataset.classes, head_rng, dtype=dtype)
    params = {f"extractor.{k}": v for k, v in extractor.named_parameters()}
    params.update({f"head.{k}": v for k, v in head.named_parameters()})
    opt = AdamW(
        params,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
    )
    seed = derive_seed(cfg.seed, _PRETRAIN_STREAM)
    cache: dict[int, list[LabeledBatch]] = {}
    per_epoch = None
    for step in range(cfg.pretrain_steps):
        if per_epoch is None:
            cache[0] = batches(samples, plan.train_ids, cfg.batch_size, seed, 0)
            per_epoch = len(cache[0])
        epoch, idx = divmod(step, per_epoch)
        if epoch not in cache:
            cache.clear()
            cache[epoch] = batches(samples, plan.train_ids, cfg.batch_size, seed, epoch)
        batch = cache[epoch][idx]
        x = Tensor(batch.images.astype(dtype))
        logits = head(F.global_avg_pool(extractor.features(x)))
        loss = losses.cls_loss(logits, batch.labels)
        loss.backward()
        opt.step()
        opt.zero_grad()
    extractor.freeze()
    return extractor


def _batch_losses(model, batch: LabeledBatch, cfg: TrainConfig, sim, weights):
    x = Tensor(batch.images.astype(cfg.dtype))
    embedding, pair = model.forward(x)
    logits = model.classify(embedding)
    l_cls = losses.cls_loss(logits, batch.labels)
    l_pcl = (
        losses.pcl_total(pair.domain, pair.task, batch.labels, batch.domains, sim)
        if cfg.use_pcl
        else None
    )
    l_cci = losses.cci(embedding, batch.labels, sim) if cfg.use_cci else None
    total = losses.total_loss(l_cls, l_pcl, l_cci, weights)
    return total, l_cls, l_pcl, l_cci, logits


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=1) == labels).mean())


def evaluate_split(model, samples: list[Sample], ids, cfg: TrainConfig, sim, weights):
    """Accuracy and mean loss components over a sample-id list (inference
    only, fixed order, remainder kept)."""
    by_id = {s.index: s for s in samples}
    ordered = [by_id[i] for i in ids]
    n = len(ordered)
    correct = 0
    sums = {"cls": 0.0, "pcl": 0.0, "cci": 0.0, "total": 0.0}
    with no_grad(), warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateBatchWarning)
        for lo in range(0, n, cfg.batch_size):
            chunk = ordered[lo : lo + cfg.batch_size]
            batch = LabeledBatch(
                images=np.stack([s.image for s in chunk]),
                labels=np.array([s.label for s in chunk], dtype=np.int64),
                domains=np.array([s.domain for s in chunk], dtype=np.int64),
                ids=np.array([s.index for s in chunk], dtype=np.int64),
            )
            total, l_cls, l_pcl, l_cci, logits = _batch_losses(model, batch, cfg, sim, weights)
            w = len(chunk)
            correct += int((logits.data.argmax(axis=1) == batch.labels).sum())
            sums["cls"] += l_cls.item() * w
            sums["pcl"] += (l_pcl.item() if l_pcl is not None else 0.0) * w
            sums["cci"] += (l_cci.item() if l_cci is not None else 0.0) * w
            sums["total"] += total.item() * w
    return correct / n, {k: v / n for k, v in sums.items()}


def _snapshot(model, opt: AdamW):
    params = {k: v.data.copy() for k, v in model.param_dict().items()}
    moments = {k: v.copy() for k, v in opt.state_arrays().items()}
    return params, opt.step_count, moments


def train(
    cfg: TrainConfig,
    samples: list[Sample] | None = None,
    out_dir: Path | None = None,
) -> TrainResult:
    """Run one training job; returns the result and, when `out_dir` is
    given, writes metrics.jsonl and checkpoint.ckpt there."""
    tune_allocator()
    with limit_blas_threads(1):
        return _train_inner(cfg, samples, out_dir)


def _train_inner(cfg, samples, out_dir):
    if samples is None:
        samples = resolve_samples(cfg)
    plan = make_splits(samples, cfg.unseen_domain, cfg.seed)
    chash = cfg.config_hash()
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    writer = MetricsWriter(Path(out_dir) / "metrics.jsonl" if out_dir else None)

    if cfg.method == "hcvp":
        extractor = pretrain_extractor(samples, plan, cfg)
        model = build_hcvp(cfg.vit_config(), extractor, cfg.seed, dtype=cfg.dtype)
    else:
        model = build_model_for(cfg)
    opt = AdamW(
        model.trainable_params(),
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
    )
    sim = SimilarityConfig(temperature=cfg.temperature, normalize=cfg.normalize_sim)
    weights = LossWeights(pcl=cfg.lambda_pcl, cci=cfg.lambda_cci)

    best = (-1.0, -1, None)  # (val accuracy, step, snapshot)
    cache: dict[int, list[LabeledBatch]] = {}
    per_epoch = None
    for step in range(cfg.steps):
        if per_epoch is None:
            cache[0] = batches(samples, plan.train_ids, cfg.batch_size, cfg.seed, 0)
            per_epoch = len(cache[0])
        epoch, idx = divmod(step, per_epoch)
        if epoch not in cache:
            cache.clear()
            cache[epoch] = batches(samples, plan.train_ids, cfg.batch_size, cfg.seed, epoch)
        batch = cache[epoch][idx]
        try:
            total, l_cls, l_pcl, l_cci, logits = _batch_losses(model, batch, cfg, sim, weights)
            total_value = total.item()
            total.backward()
            opt.step()
        except FloatingPointError as err:
            writer.close()
            raise TrainingAbortedError(f"aborted at step {step + 1}: {err}") from err
        opt.zero_grad()
        writer.write(
            {
                "step": step + 1,
                "split": "train",
                "loss_cls": l_cls.item(),
                "loss_pcl": l_pcl.item() if l_pcl is not None else None,
                "loss_cci": l_cci.item() if l_cci is not None else None,
                "loss_total": total_value,
                "accuracy": _accuracy(logits.data, batch.labels),
                "seed": cfg.seed,
                "config_hash": chash,
            }
        )
        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps:
            val_acc, val_losses = evaluate_split(model, samples, plan.val_ids, cfg, sim, weights)
            writer.write(
                {
                    "step": step + 1,
                    "split": "val",
                    "loss_cls": val_losses["cls"],
                    "loss_pcl": val_losses["pcl"],
                    "loss_cci": val_losses["cci"],
                    "loss_total": val_losses["total"],
                    "accuracy": val_acc,
                    "seed": cfg.seed,
                    "config_hash": chash,
                }
            )
            if val_acc > best[0]:
                best = (val_acc, step + 1, _snapshot(model, opt))

    train_acc, train_losses = evaluate_split(model, samples, plan.train_ids, cfg, sim, weights)
    writer.write(
        {
            "step": cfg.steps,
            "split": "train_full",
            "loss_cls": train_losses["cls"],
            "loss_pcl": train_losses["pcl"],
            "loss_cci": train_losses["cci"],
            "loss_total": train_losses["total"],
            "accuracy": train_acc,
            "seed": cfg.seed,
            "config_hash": chash,
        }
    )
    writer.close()

    checkpoint_path = None
    best_acc, best_step, snap = best
    if out_dir is not None:
        checkpoint_path = Path(out_dir) / "checkpoint.ckpt"
        params, opt_steps, moments = snap
        save_checkpoint(
            checkpoint_path,
            config=cfg,
            step=best_step,
            best_val_accuracy=best_acc,
            params=params,
            opt_step_count=opt_steps,
            opt_moments=moments,
        )
    else:
        # keep the best weights on the in-memory model for direct evaluation
        params, _, _ = snap
        tensors = model.param_dict()
        for name, arr in params.items():
            tensors[name].data = arr
    return TrainResult(
        config=cfg,
        best_step=best_step,
        best_val_accuracy=best_acc,
        final_train_accuracy=train_acc,
        records=writer.records,
        checkpoint_path=checkpoint_path,
        plan=plan,
    )


def resume_step_losses(
    ckpt, samples: list[Sample], n_steps: int = 1
) -> list[float]:
    """Continue training from a checkpoint for a few steps and return the
    per-step total losses (used to verify bit-exact round-tripping)."""
    from .checkpoint import restore_model

    cfg = ckpt.config
    with limit_blas_threads(1):
        model = restore_model(ckpt)
        opt = AdamW(
            model.trainable_params(),
            lr=cfg.lr,
            weight_decay=cfg.weight_decay,
            betas=(cfg.beta1, cfg.beta2),
            eps=cfg.eps,
        )
        opt.load_state(ckpt.opt_step_count, ckpt.opt_moments)
        plan = make_splits(samples, cfg.unseen_domain, cfg.seed)
        per_epoch = len(batches(samples, plan.train_ids, cfg.batch_size, cfg.seed, 0))
        sim = SimilarityConfig(temperature=cfg.temperature, normalize=cfg.normalize_sim)
        weights = LossWeights(pcl=cfg.lambda_pcl, cci=cfg.lambda_cci)
        out = []
        for step in range(ckpt.step, ckpt.step + n_steps):
            epoch, idx = divmod(step, per_epoch)
            batch = batches(samples, plan.train_ids, cfg.batch_size, cfg.seed, epoch)[idx]
            total, *_ = _batch_losses(model, batch, cfg, sim, weights)
            out.append(total.item())
            total.backward()
            opt.step()
            opt.zero_grad()
        return out
