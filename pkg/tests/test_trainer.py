"""Training loop: determinism, model selection, freeze contract, hygiene."""

import numpy as np
import pytest

from hcvp import losses
from hcvp.data import DatasetConfig, generate, make_splits
from hcvp.train import (
    TrainConfig,
    TrainingAbortedError,
    load_checkpoint,
    pretrain_extractor,
    restore_model,
    resume_step_losses,
    train,
)
from hcvp.train import trainer as trainer_module


def tiny_config(**kwargs):
    defaults = dict(
        method="hcvp",
        steps=12,
        eval_every=6,
        pretrain_steps=8,
        batch_size=32,
        seed=0,
        dataset=DatasetConfig(per_cell=8),
    )
    defaults.update(kwargs)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def tiny_samples():
    return generate(DatasetConfig(per_cell=8))


def test_config_validation():
    from hcvp.data import ConfigError

    with pytest.raises(ConfigError):
        TrainConfig(method="mystery")
    with pytest.raises(ConfigError):
        TrainConfig(unseen_domain=9)
    with pytest.raises(ConfigError):
        TrainConfig(steps=0)
    erm = TrainConfig(method="erm", use_pcl=True, use_cci=True)
    assert not erm.use_pcl and not erm.use_cci


def test_identical_runs_identical_streams(tiny_samples, tmp_path):
    cfg = tiny_config()
    a = train(cfg, samples=tiny_samples, out_dir=tmp_path / "a")
    b = train(cfg, samples=tiny_samples, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (
        tmp_path / "b" / "metrics.jsonl"
    ).read_bytes()
    assert a.best_val_accuracy == b.best_val_accuracy


def test_seed_changes_stream(tiny_samples, tmp_path):
    a = train(tiny_config(seed=0), samples=tiny_samples, out_dir=tmp_path / "a")
    b = train(tiny_config(seed=1), samples=tiny_samples, out_dir=tmp_path / "b")
    la = [r["loss_total"] for r in a.records if r["split"] == "train"]
    lb = [r["loss_total"] for r in b.records if r["split"] == "train"]
    assert la != lb


def test_model_selection_takes_maximum(tiny_samples, tmp_path):
    cfg = tiny_config(steps=18, eval_every=3)
    result = train(cfg, samples=tiny_samples, out_dir=tmp_path / "run")
    evals = [r for r in result.records if r["split"] == "val"]
    assert result.best_val_accuracy == max(r["accuracy"] for r in evals)
    best_record = [r for r in evals if r["step"] == result.best_step][0]
    assert best_record["accuracy"] == result.best_val_accuracy


def test_loss_graph_hygiene_counters(tiny_samples, tmp_path):
    losses.reset_call_counts()
    train(tiny_config(use_pcl=False, use_cci=True), samples=tiny_samples, out_dir=tmp_path / "a")
    assert losses.CALL_COUNTS["pcl_domain"] == 0
    assert losses.CALL_COUNTS["pcl_task"] == 0
    assert losses.CALL_COUNTS["cci"] > 0

    losses.reset_call_counts()
    train(tiny_config(use_cci=False), samples=tiny_samples, out_dir=tmp_path / "b")
    assert losses.CALL_COUNTS["cci"] == 0
    assert losses.CALL_COUNTS["pcl_domain"] > 0


def test_erm_runs_only_classification(tiny_samples, tmp_path):
    losses.reset_call_counts()
    result = train(tiny_config(method="erm"), samples=tiny_samples, out_dir=tmp_path / "erm")
    assert losses.CALL_COUNTS["pcl_domain"] == 0
    assert losses.CALL_COUNTS["pcl_task"] == 0
    assert losses.CALL_COUNTS["cci"] == 0
    assert losses.CALL_COUNTS["cls"] > 0
    for r in result.records:
        if r["split"] == "train":
            assert r["loss_pcl"] is None and r["loss_cci"] is None
            assert r["loss_total"] == r["loss_cls"]


def test_erm_checkpoint_has_no_prompt_parameters(tiny_samples, tmp_path):
    train(tiny_config(method="erm"), samples=tiny_samples, out_dir=tmp_path / "erm")
    ckpt = load_checkpoint(tmp_path / "erm" / "checkpoint.ckpt")
    assert all(name.startswith("vit.") for name in ckpt.params)


def test_extractor_frozen_during_training(tiny_samples):
    cfg = tiny_config(steps=10)
    samples = tiny_samples
    plan = make_splits(samples, cfg.unseen_domain, cfg.seed)
    extractor = pretrain_extractor(samples, plan, cfg)
    before = {k: v.data.copy() for k, v in extractor.named_parameters()}

    from hcvp.models import build_hcvp
    from hcvp.autodiff import AdamW
    from hcvp.losses import LossWeights, SimilarityConfig
    from hcvp.data import batches

    model = build_hcvp(cfg.vit_config(), extractor, cfg.seed, dtype=cfg.dtype)
    opt = AdamW(model.trainable_params(), lr=cfg.lr)
    sim, weights = SimilarityConfig(), LossWeights()
    for step, batch in enumerate(batches(samples, plan.train_ids, 32, cfg.seed, 0)[:6]):
        total, *_ = trainer_module._batch_losses(model, batch, cfg, sim, weights)
        total.backward()
        opt.step()
        opt.zero_grad()
    after = dict(extractor.named_parameters())
    for name, value in before.items():
        assert value.tobytes() == after[name].data.tobytes(), f"{name} changed"


def test_pretrain_deterministic(tiny_samples):
    cfg = tiny_config()
    plan = make_splits(tiny_samples, cfg.unseen_domain, cfg.seed)
    a = pretrain_extractor(tiny_samples, plan, cfg)
    b = pretrain_extractor(tiny_samples, plan, cfg)
    for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert pa.data.tobytes() == pb.data.tobytes()


def test_checkpoint_roundtrip_bitwise(tiny_samples, tmp_path):
    cfg = tiny_config(steps=10, eval_every=10)
    result = train(cfg, samples=tiny_samples, out_dir=tmp_path / "base")
    assert result.best_step == 10
    ckpt = load_checkpoint(tmp_path / "base" / "checkpoint.ckpt")
    resumed = resume_step_losses(ckpt, tiny_samples, n_steps=1)[0]
    longer = train(
        cfg.with_overrides(steps=11, eval_every=10),
        samples=tiny_samples,
        out_dir=tmp_path / "longer",
    )
    record = [r for r in longer.records if r["split"] == "train" and r["step"] == 11][0]
    assert resumed == record["loss_total"]


def test_restored_model_reproduces_val_accuracy(tiny_samples, tmp_path):
    cfg = tiny_config(steps=10, eval_every=5)
    result = train(cfg, samples=tiny_samples, out_dir=tmp_path / "run")
    ckpt = load_checkpoint(tmp_path / "run" / "checkpoint.ckpt")
    model = restore_model(ckpt)
    from hcvp.losses import LossWeights, SimilarityConfig

    plan = make_splits(tiny_samples, cfg.unseen_domain, cfg.seed)
    acc, _ = trainer_module.evaluate_split(
        model, tiny_samples, plan.val_ids, cfg, SimilarityConfig(), LossWeights()
    )
    assert acc == result.best_val_accuracy


def test_nan_loss_aborts_with_component(tiny_samples, tmp_path, monkeypatch):
    cfg = tiny_config(steps=6)
    original = trainer_module._batch_losses
    calls = {"n": 0}

    def broken(model, batch, cfg_, sim, weights):
        calls["n"] += 1
        if calls["n"] == 3:
            from hcvp.autodiff import Tensor
            from hcvp.losses import total_loss

            bad = Tensor(np.nan)
            return total_loss(bad, None, None, weights), bad, None, None, Tensor(np.zeros((2, 4)))
        return original(model, batch, cfg_, sim, weights)

    monkeypatch.setattr(trainer_module, "_batch_losses", broken)
    with pytest.raises(TrainingAbortedError, match="cls"):
        train(cfg, samples=tiny_samples, out_dir=tmp_path / "nan")


def test_metrics_schema(tiny_samples, tmp_path):
    cfg = tiny_config()
    result = train(cfg, samples=tiny_samples, out_dir=tmp_path / "run")
    required = {"step", "split", "loss_cls", "loss_pcl", "loss_cci", "loss_total", "accuracy", "seed", "config_hash"}
    for record in result.records:
        assert required <= set(record)
    splits = {r["split"] for r in result.records}
    assert splits == {"train", "val", "train_full"}
