"""Figure and table rendering for command outputs.

Every report-producing command pairs its machine-readable output (JSON/JSONL/
CSV) with a rendered figure, so runs can be skimmed without loading anything.
"""

import csv
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def write_csv(path, fieldnames: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def save_loss_curves(records: Sequence[dict], path) -> None:
    """Training log -> total loss plus per-term curves and the lr schedule."""
    steps = [r["step"] for r in records]
    fig, (ax, ax_lr) = plt.subplots(
        2, 1, figsize=(8, 6), sharex=True, height_ratios=[3, 1]
    )
    ax.plot(steps, [r["loss"] for r in records], label="total", lw=1.8)
    for term in ("mask_ce", "dice", "cls"):
        ax.plot(steps, [r[term] for r in records], label=term, lw=1.0, alpha=0.7)
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, alpha=0.3)
    ax_lr.plot(steps, [r["lr"] for r in records], color="tab:red", lw=1.2)
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("step")
    ax_lr.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_metric_bars(metrics: dict, path) -> None:
    """MetricReport dict -> one bar per bounded metric, counts annotated."""
    bounded = ["ap", "ap50", "ap75", "bg", "obj", "pu", "ru", "fu"]
    names = [k for k in bounded if metrics.get(k) is not None]
    values = [metrics[k] for k in names]
    fig, ax = plt.subplots(figsize=(7, 4))
    bars = ax.bar(names, values, color="tab:blue")
    ax.bar_label(bars, fmt="%.3f", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    title = f"fp/frame={metrics['fp_per_frame']:.3f}  fn/frame={metrics['fn_per_frame']:.3f}"
    ax.set_title(title, fontsize=10)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_bench_chart(rows: Sequence[dict], path) -> None:
    """Per-mechanism attention pairs (log scale) and forward wall time."""
    names = [r["mechanism"] for r in rows]
    fig, (ax_pairs, ax_time) = plt.subplots(1, 2, figsize=(10, 4))
    ax_pairs.bar(names, [r["attention_pairs"] for r in rows], color="tab:purple")
    ax_pairs.set_yscale("log")
    ax_pairs.set_ylabel("attention pairs / forward")
    ax_pairs.tick_params(axis="x", rotation=30)
    ax_pairs.grid(True, axis="y", alpha=0.3)
    ax_time.bar(names, [r["forward_ms"] for r in rows], color="tab:green")
    ax_time.set_ylabel("forward time (ms)")
    ax_time.tick_params(axis="x", rotation=30)
    ax_time.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_detection_overlay(
    image: np.ndarray,
    detections: Sequence,
    path,
    ground_truth: Optional[Sequence[np.ndarray]] = None,
) -> None:
    """Frame with predicted masks tinted per instance; GT drawn as contours."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(np.clip(image, 0.0, 1.0))
    cmap = plt.get_cmap("tab10")
    for i, (mask, conf) in enumerate(detections):
        color = cmap(i % 10)
        tint = np.zeros((*mask.shape, 4))
        tint[mask] = (*color[:3], 0.45)
        ax.imshow(tint)
        ys, xs = np.nonzero(mask)
        if len(ys):
            ax.text(
                xs.min(), ys.min() - 1, f"{conf:.2f}",
                color=color, fontsize=7, weight="bold",
            )
    if ground_truth:
        for gt in ground_truth:
            ax.contour(gt.astype(float), levels=[0.5], colors="white", linewidths=1.0)
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)


def metric_csv_rows(metrics: dict) -> list:
    return [{"metric": k, "value": "" if v is None else v} for k, v in metrics.items()]
