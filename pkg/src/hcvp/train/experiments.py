"""Multi-run protocols: ablation over loss terms and loss-weight sweeps.

Each run trains in its own output directory and is summarized by a flat
record; independent runs can execute in parallel worker processes (results
are identical either way since every run pins its BLAS pool to one
thread)."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .. import evaluate
from ..data import make_splits
from .checkpoint import load_checkpoint, restore_model
from .config import TrainConfig
from .trainer import resolve_samples, train

ABLATION_VARIANTS = {
    "full": (True, True),
    "no_pcl": (False, True),
    "no_cci": (True, False),
    "vanilla": (False, False),
}

PCL_GRID = (0.001, 0.01, 0.1, 0.5, 1.0)
CCI_GRID = (0.01, 0.1, 0.3, 0.6, 1.0)


@dataclass(frozen=True)
class RunSpec:
    tag: str
    config: TrainConfig
    out_dir: str


def _pcl_trend(records: list[dict], window: int = 100) -> tuple[float | None, float | None]:
    vals = [r["loss_pcl"] for r in records if r["split"] == "train" and r["loss_pcl"] is not None]
    if not vals:
        return None, None
    w = min(window, len(vals))
    return float(np.mean(vals[:w])), float(np.mean(vals[-w:]))


def execute_run(spec: RunSpec) -> dict:
    """Train one configuration, evaluate the best checkpoint, and return a
    flat summary record."""
    cfg = spec.config
    out_dir = Path(spec.out_dir)
    result = train(cfg, out_dir=out_dir)
    ckpt = load_checkpoint(result.checkpoint_path)
    model = restore_model(ckpt)
    samples = resolve_samples(cfg)
    plan = make_splits(samples, cfg.unseen_domain, cfg.seed)
    summary = {
        "tag": spec.tag,
        "method": cfg.method,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "best_step": result.best_step,
        "best_val_accuracy": result.best_val_accuracy,
        "final_train_accuracy": result.final_train_accuracy,
        "unseen_accuracy": evaluate.unseen_accuracy(model, cfg, samples, plan),
        "out_dir": str(out_dir),
    }
    report = evaluate.inter_domain_distance(model, cfg, samples, plan)
    summary["mean_domain_distance"] = report.mean_distance
    summary["class_conditional_distance"] = report.class_conditional_mean
    if cfg.method == "hcvp":
        purity = evaluate.prompt_cluster_score(model, cfg, samples, plan.val_ids)
        summary.update(
            domain_purity=purity["domain_purity"], task_purity=purity["task_purity"]
        )
    first, last = _pcl_trend(result.records)
    summary["pcl_first"] = first
    summary["pcl_last"] = last
    return summary


def run_many(specs: list[RunSpec], jobs: int = 1) -> list[dict]:
    """Execute runs, optionally across processes; order follows `specs`."""
    if jobs <= 1 or len(specs) <= 1:
        return [execute_run(s) for s in specs]
    ctx = get_context("spawn")
    with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
        return list(pool.map(execute_run, specs))


def ablate(
    base: TrainConfig,
    seeds: tuple[int, ...],
    out_dir: Path,
    jobs: int = 1,
    datasets: dict[str, "TrainConfig"] | None = None,
) -> dict:
    """Train the four loss variants (full, w/o PCL, w/o CCI, vanilla) at
    identical seeds and data; returns {variant: {dataset: mean accuracy}}
    plus per-run records."""
    out_dir = Path(out_dir)
    if datasets is None:
        name = "correlation" if base.dataset.spurious is not None else "diversity"
        datasets = {name: base}
    specs = []
    for variant, (use_pcl, use_cci) in ABLATION_VARIANTS.items():
        for ds_name, ds_base in datasets.items():
            for seed in seeds:
                cfg = ds_base.with_overrides(
                    method="hcvp", use_pcl=use_pcl, use_cci=use_cci, seed=seed
                )
                tag = f"{variant}@{ds_name}"
                specs.append(
                    RunSpec(tag=tag, config=cfg, out_dir=str(out_dir / f"{variant}-{ds_name}-s{seed}"))
                )
    summaries = run_many(specs, jobs=jobs)
    with open(out_dir / "ablation.jsonl", "w") as fh:
        for s in summaries:
            fh.write(json.dumps(s, sort_keys=True) + "\n")

    table: dict[str, dict[str, float]] = {}
    for variant in ABLATION_VARIANTS:
        row = {}
        for ds_name in datasets:
            accs = [
                s["unseen_accuracy"]
                for s in summaries
                if s["tag"] == f"{variant}@{ds_name}"
            ]
            row[ds_name] = float(np.mean(accs))
        row["avg"] = float(np.mean(list(row.values())))
        table[variant] = row
    columns = list(datasets) + ["avg"]
    with open(out_dir / "ablation.csv", "w") as fh:
        fh.write("variant," + ",".join(columns) + "\n")
        for variant, row in table.items():
            fh.write(variant + "," + ",".join(f"{row[c]:.4f}" for c in columns) + "\n")
    return {"table": table, "columns": columns, "runs": summaries}


def sweep(
    base: TrainConfig,
    axis: str,
    out_dir: Path,
    steps: int = 500,
    seeds: tuple[int, ...] = (0,),
    jobs: int = 1,
    values: tuple[float, ...] | None = None,
) -> list[dict]:
    """Shortened runs over one loss-weight grid with the other held fixed;
    emits one validation-accuracy record per grid point."""
    if axis not in ("pcl", "cci"):
        raise ValueError(f"sweep axis must be 'pcl' or 'cci', got {axis!r}")
    if values is None:
        values = PCL_GRID if axis == "pcl" else CCI_GRID
    out_dir = Path(out_dir)
    specs = []
    for value in values:
        for seed in seeds:
            overrides = {"steps": steps, "seed": seed, "method": "hcvp"}
            if axis == "pcl":
                overrides["lambda_pcl"] = value
                overrides["use_pcl"] = value > 0
            else:
                overrides["lambda_cci"] = value
                overrides["use_cci"] = value > 0
            cfg = base.with_overrides(**overrides)
            specs.append(
                RunSpec(
                    tag=f"{axis}={value:g}",
                    config=cfg,
                    out_dir=str(out_dir / f"{axis}-{value:g}-s{seed}"),
                )
            )
    summaries = run_many(specs, jobs=jobs)
    rows = []
    for spec, s in zip(specs, summaries):
        rows.append(
            {
                "axis": axis,
                "value": float(spec.tag.split("=")[1]),
                "seed": s["seed"],
                "val_accuracy": s["best_val_accuracy"],
                "unseen_accuracy": s["unseen_accuracy"],
            }
        )
    with open(out_dir / "sweep.jsonl", "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    with open(out_dir / "sweep.csv", "w") as fh:
        fh.write("axis,value,seed,val_accuracy,unseen_accuracy\n")
        for r in rows:
            fh.write(
                f"{r['axis']},{r['value']:g},{r['seed']},"
                f"{r['val_accuracy']:.4f},{r['unseen_accuracy']:.4f}\n"
            )
    return rows
