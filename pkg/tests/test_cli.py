"""Command-line behavior: manifests, exit codes, flag semantics."""

import json

import numpy as np
import pytest

from hcvp.cli import main
from hcvp.train import load_checkpoint

TINY_TRAIN = [
    "--per-cell", "8", "--steps", "6", "--eval-every", "3", "--pretrain-steps", "4",
]


def run(argv):
    return main(argv)


def test_gen_writes_dataset_and_manifest(tmp_path, capsys):
    out = tmp_path / "ds"
    code = run(["gen", "--classes", "4", "--domains", "4", "--per-cell", "8",
                "--seed", "7", "--spurious", "0.9", "--out", str(out)])
    assert code == 0
    printed = capsys.readouterr().out
    assert "128 samples" in printed
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "gen"
    assert manifest["config"]["spurious"] == 0.9
    assert (out / "all.bin").exists() and (out / "all.idx").exists()
    idx_lines = (out / "all.idx").read_text().splitlines()
    assert len(idx_lines) == 128


def test_gen_refuses_nonempty_dir(tmp_path, capsys):
    out = tmp_path / "ds"
    assert run(["gen", "--per-cell", "8", "--out", str(out)]) == 0
    assert run(["gen", "--per-cell", "8", "--out", str(out)]) == 2
    assert run(["gen", "--per-cell", "8", "--out", str(out), "--force"]) == 0


def test_gen_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(["gen", "--per-cell", "8", "--seed", "3", "--out", str(a)])
    run(["gen", "--per-cell", "8", "--seed", "3", "--out", str(b)])
    assert (a / "all.bin").read_bytes() == (b / "all.bin").read_bytes()
    assert (a / "all.idx").read_bytes() == (b / "all.idx").read_bytes()


def test_gen_invalid_config_exit_2(tmp_path):
    assert run(["gen", "--per-cell", "2", "--out", str(tmp_path / "x")]) == 2


def test_train_defaults_in_manifest(tmp_path, capsys):
    out = tmp_path / "run"
    code = run(["train", "--method", "hcvp", "--unseen", "3", "--seed", "0",
                *TINY_TRAIN, "--out", str(out)])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["lambda_pcl"] == 0.1
    assert manifest["config"]["lambda_cci"] == 1.0
    assert manifest["config"]["use_pcl"] is True
    assert (out / "metrics.jsonl").exists()
    assert (out / "checkpoint.ckpt").exists()
    assert (out / "curves.png").exists()
    printed = capsys.readouterr().out
    assert "best_val_accuracy" in printed


def test_train_flags_map_to_vanilla(tmp_path):
    out = tmp_path / "run"
    code = run(["train", "--no-pcl", "--no-cci", *TINY_TRAIN, "--out", str(out)])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["use_pcl"] is False
    assert manifest["config"]["use_cci"] is False
    assert manifest["config"]["method"] == "hcvp"


def test_train_erm_checkpoint_manifest(tmp_path):
    out = tmp_path / "run"
    code = run(["train", "--method", "erm", *TINY_TRAIN, "--out", str(out)])
    assert code == 0
    ckpt = load_checkpoint(out / "checkpoint.ckpt")
    assert all(name.startswith("vit.") for name in ckpt.params)


def test_train_from_exported_dataset(tmp_path):
    ds = tmp_path / "ds"
    assert run(["gen", "--per-cell", "8", "--out", str(ds)]) == 0
    out = tmp_path / "run"
    code = run(["train", "--data", str(ds), *TINY_TRAIN, "--out", str(out)])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["data_dir"] == str(ds.resolve())
    assert "dataset_dir" in manifest["artifact_hashes"]


def test_eval_command(tmp_path):
    run_dir = tmp_path / "run"
    assert run(["train", *TINY_TRAIN, "--out", str(run_dir)]) == 0
    eval_dir = tmp_path / "eval"
    code = run(["eval", "--checkpoint", str(run_dir / "checkpoint.ckpt"),
                "--out", str(eval_dir), "--export-embeddings", "domain-prompt"])
    assert code == 0
    records = [json.loads(l) for l in (eval_dir / "report.jsonl").read_text().splitlines()]
    kinds = {r["kind"] for r in records}
    assert kinds == {"unseen_accuracy", "inter_domain_distance", "prompt_purity"}
    assert (eval_dir / "distances.png").exists()
    csv = (eval_dir / "embeddings.csv").read_text().splitlines()
    assert len(csv[0].split(",")) == 66


def test_eval_rerun_reproduces_records(tmp_path):
    run_dir = tmp_path / "run"
    assert run(["train", *TINY_TRAIN, "--out", str(run_dir)]) == 0
    a, b = tmp_path / "e1", tmp_path / "e2"
    for out in (a, b):
        assert run(["eval", "--checkpoint", str(run_dir / "checkpoint.ckpt"), "--out", str(out)]) == 0
    reports = [(p / "report.jsonl").read_bytes() for p in (a, b)]
    assert reports[0] == reports[1]


def test_missing_checkpoint_exit_1(tmp_path):
    assert run(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"),
                "--out", str(tmp_path / "out")]) == 1


def test_bad_flag_exits_2(tmp_path):
    with pytest.raises(SystemExit) as err:
        run(["train", "--definitely-not-a-flag", "--out", str(tmp_path / "x")])
    assert err.value.code == 2


def test_config_file_precedence(tmp_path):
    conf = tmp_path / "base.conf"
    conf.write_text("steps = 4\nper-cell = 8\npretrain-steps = 4\neval-every = 2\n")
    out1 = tmp_path / "r1"
    assert run(["--config", str(conf), "train", "--out", str(out1)]) == 0
    assert json.loads((out1 / "manifest.json").read_text())["config"]["steps"] == 4
    out2 = tmp_path / "r2"
    assert run(["--config", str(conf), "train", "--steps", "6", "--out", str(out2)]) == 0
    assert json.loads((out2 / "manifest.json").read_text())["config"]["steps"] == 6


def test_config_file_unknown_key(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("warp-speed = 9\n")
    assert run(["--config", str(conf), "train", "--out", str(tmp_path / "x")]) == 2


def test_config_file_missing(tmp_path):
    assert run(["--config", str(tmp_path / "none.conf"), "train",
                "--out", str(tmp_path / "x")]) == 1


def test_gradcheck_failure_exits_3(monkeypatch):
    from hcvp.autodiff.gradcheck import GradcheckReport
    import hcvp.autodiff
    import hcvp.verification

    bad = GradcheckReport(per_tensor={"mul": 0.5})
    good = GradcheckReport(per_tensor={"full": 1e-9})
    monkeypatch.setattr(hcvp.autodiff, "run_primitive_suite", lambda seed=0: bad)
    monkeypatch.setattr(hcvp.verification, "full_graph_gradcheck", lambda seed=0: good)
    assert run(["gradcheck"]) == 3


def test_training_abort_exits_3(tmp_path, monkeypatch):
    import hcvp.cli
    from hcvp.train import TrainingAbortedError

    def boom(cfg, out_dir=None):
        raise TrainingAbortedError("aborted at step 3: loss component 'cls' is not finite")

    monkeypatch.setattr(hcvp.cli, "train", boom)
    assert run(["train", *TINY_TRAIN, "--out", str(tmp_path / "x")]) == 3
