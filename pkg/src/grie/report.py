"""Run artifacts: metrics JSON, stdout tables, CSV output, and figures.

Every figure-producing path writes a PNG next to the delimited file it
belongs with, so a report directory is self-contained.
"""

from __future__ import annotations

import json
from pathlib import Path


def _matplotlib():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def strip_predictions(scores: dict) -> dict:
    return {k: v for k, v in scores.items() if k != "predictions"}


def save_metrics_json(report: dict, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def format_score_table(scores: dict) -> str:
    """Per-class P/R/F1 rows plus the micro totals, aligned for stdout."""
    lines = [f"{'class':<10} {'prec':>7} {'recall':>7} {'f1':>7} {'tp':>4} {'pred':>5} {'gold':>5}"]
    for cls, row in scores.get("per_class", {}).items():
        lines.append(
            f"{cls:<10} {row['precision']:>7.4f} {row['recall']:>7.4f} {row['f1']:>7.4f}"
            f" {row['tp']:>4d} {row['pred']:>5d} {row['gold']:>5d}"
        )
    lines.append(
        f"{'micro':<10} {scores['precision']:>7.4f} {scores['recall']:>7.4f} {scores['f1']:>7.4f}"
        f" {scores['tp']:>4d} {scores['pred']:>5d} {scores['gold']:>5d}"
    )
    return "\n".join(lines)


def plot_training_curves(report: dict, png_path):
    plt = _matplotlib()
    fig, ax1 = plt.subplots(figsize=(7, 4))
    epochs = range(1, len(report["loss_curve"]) + 1)
    ax1.plot(epochs, report["loss_curve"], color="tab:blue", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("mean CRF loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(epochs, report["val_f1_curve"], color="tab:orange", label="val F1")
    ax2.set_ylabel("validation entity F1", color="tab:orange")
    ax2.set_ylim(0, 1.05)
    fig.tight_layout()
    Path(png_path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(png_path, dpi=110)
    plt.close(fig)


def save_k_sweep(rows: list, csv_path, png_path=None):
    """CSV with header k,val_f1 and the matching single-panel figure."""
    path = Path(csv_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["k,val_f1"] + [f"{row['k']},{row['val_f1']:.6f}" for row in rows]
    path.write_text("\n".join(lines) + "\n")
    if png_path is not None:
        plt = _matplotlib()
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot([r["k"] for r in rows], [r["val_f1"] for r in rows], marker="o")
        ax.set_xlabel("K (kept neighbors per node)")
        ax.set_ylabel("validation entity F1")
        ax.set_ylim(0, 1.05)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(png_path, dpi=110)
        plt.close(fig)


def format_ablation_table(rows: list) -> str:
    lines = [f"{'variant':<12} {'val_f1':>8} {'pair_f1':>8} {'delta':>8}"]
    for row in rows:
        lines.append(
            f"{row['variant']:<12} {row['val_f1']:>8.4f} {row['pair_f1']:>8.4f} {row['delta_vs_full']:>+8.4f}"
        )
    return "\n".join(lines)


def save_ablation(rows: list, csv_path, png_path=None):
    path = Path(csv_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["variant,val_f1,pair_f1,delta_vs_full"]
    for r in rows:
        lines.append(f"{r['variant']},{r['val_f1']:.6f},{r['pair_f1']:.6f},{r['delta_vs_full']:.6f}")
    path.write_text("\n".join(lines) + "\n")
    if png_path is not None:
        plt = _matplotlib()
        fig, ax = plt.subplots(figsize=(7, 4))
        names = [r["variant"] for r in rows]
        x = range(len(rows))
        ax.bar([i - 0.2 for i in x], [r["val_f1"] for r in rows], width=0.4, label="micro F1")
        ax.bar([i + 0.2 for i in x], [r["pair_f1"] for r in rows], width=0.4, label="date+total F1")
        ax.set_xticks(list(x), names, rotation=20)
        ax.set_ylim(0, 1.05)
        ax.legend()
        fig.tight_layout()
        fig.savefig(png_path, dpi=110)
        plt.close(fig)
