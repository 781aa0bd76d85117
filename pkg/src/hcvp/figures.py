"""Matplotlib renderings written next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_training_curves(records: list[dict], path: Path) -> None:
    """Loss components over steps plus the validation accuracy trace."""
    train = [r for r in records if r["split"] == "train"]
    val = [r for r in records if r["split"] == "val"]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    steps = [r["step"] for r in train]
    ax1.plot(steps, [r["loss_cls"] for r in train], label="cls", lw=0.8)
    if any(r["loss_pcl"] is not None for r in train):
        ax1.plot(steps, [r["loss_pcl"] for r in train], label="pcl", lw=0.8)
    if any(r["loss_cci"] is not None for r in train):
        ax1.plot(steps, [r["loss_cci"] for r in train], label="cci", lw=0.8)
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    if val:
        ax2.plot([r["step"] for r in val], [r["accuracy"] for r in val], marker="o", ms=3)
    ax2.set_xlabel("step")
    ax2.set_ylabel("val accuracy")
    ax2.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_distance_chart(report, path: Path) -> None:
    """Bar chart of pairwise inter-domain centroid distances."""
    pairs = sorted(report.pair_distances)
    values = [report.pair_distances[p] for p in pairs]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar([f"{a}-{b}" for a, b in pairs], values, color="#4878d0")
    ax.axhline(report.mean_distance, color="k", ls="--", lw=0.8, label="mean")
    ax.set_ylabel("centroid distance")
    ax.set_xlabel("domain pair")
    ax.set_title(f"{report.method} (seed {report.seed})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_chart(table: dict[str, dict[str, float]], columns: list[str], path: Path) -> None:
    """Grouped bars: unseen accuracy per loss variant and dataset."""
    variants = list(table)
    width = 0.8 / len(columns)
    fig, ax = plt.subplots(figsize=(6, 3.4))
    for j, col in enumerate(columns):
        xs = [i + j * width for i in range(len(variants))]
        ax.bar(xs, [table[v][col] for v in variants], width=width, label=col)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(variants))])
    ax.set_xticklabels(variants)
    ax.set_ylabel("unseen-domain accuracy")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_curve(rows: list[dict], path: Path) -> None:
    """Validation accuracy against the swept loss weight (log x)."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    seeds = sorted({r["seed"] for r in rows})
    for seed in seeds:
        pts = sorted((r["value"], r["val_accuracy"]) for r in rows if r["seed"] == seed)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", ms=4, label=f"seed {seed}")
    ax.set_xscale("log")
    axis = rows[0]["axis"] if rows else "?"
    ax.set_xlabel(f"lambda_{axis}")
    ax.set_ylabel("val accuracy")
    ax.set_ylim(0, 1)
    if len(seeds) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
