"""Metrics reports: delimited tables plus rendered figures.

Every eval or training run writes a CSV, a plain-text summary, and PNG
figures side by side under the store's reports/ directory.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from segcritic.core import DEFAULT_TAXONOMY
from segcritic.metrics import ConfusionMatrix, miou


def write_metrics_report(
    rows: list[dict],
    out_dir: Path,
    confusions: dict[str, ConfusionMatrix] | None = None,
) -> dict[str, Path]:
    """Write metrics.csv / metrics.txt and bar-chart figures.

    ``rows`` are flat dicts (model, split, miou, per-class IoUs, ...); the
    union of keys becomes the CSV header.
    """
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)

    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    csv_path = out_dir / "metrics.csv"
    with csv_path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)

    txt_path = out_dir / "metrics.txt"
    with txt_path.open("w") as f:
        for row in rows:
            f.write(
                "  ".join(
                    f"{k}={row[k]:.4f}" if isinstance(row[k], float) else f"{k}={row[k]}"
                    for k in keys
                    if k in row
                )
                + "\n"
            )

    paths = {"csv": csv_path, "txt": txt_path}

    iou_rows = [r for r in rows if "miou" in r]
    if iou_rows:
        names = DEFAULT_TAXONOMY.names
        fig, ax = plt.subplots(figsize=(8, 4))
        width = 0.8 / len(iou_rows)
        x = np.arange(len(names))
        for i, row in enumerate(iou_rows):
            vals = [row.get(f"iou_{n}", np.nan) for n in names]
            vals = [np.nan if v is None or v == "" else float(v) for v in vals]
            ax.bar(x + i * width, vals, width, label=str(row.get("model", f"run {i}")))
        ax.set_xticks(x + 0.4 - width / 2)
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("IoU")
        ax.set_ylim(0, 1.05)
        ax.legend(fontsize=8)
        ax.set_title("Per-class IoU")
        fig.tight_layout()
        path = fig_dir / "per_class_iou.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths["per_class_iou"] = path

    if confusions:
        for name, cm in confusions.items():
            fig, ax = plt.subplots(figsize=(5, 4.5))
            counts = cm.counts.astype(np.float64)
            norm = counts / np.maximum(counts.sum(axis=1, keepdims=True), 1)
            im = ax.imshow(norm, cmap="Blues", vmin=0, vmax=1)
            ax.set_xticks(range(7))
            ax.set_yticks(range(7))
            ax.set_xticklabels(DEFAULT_TAXONOMY.names, rotation=45, ha="right", fontsize=7)
            ax.set_yticklabels(DEFAULT_TAXONOMY.names, fontsize=7)
            ax.set_xlabel("prediction")
            ax.set_ylabel("ground truth")
            ax.set_title(f"Row-normalized confusion: {name}")
            fig.colorbar(im, shrink=0.8)
            fig.tight_layout()
            path = fig_dir / f"confusion_{name}.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            paths[f"confusion_{name}"] = path

    return paths


def write_training_report(log: list[dict], out_dir: Path, name: str = "training") -> dict[str, Path]:
    """Per-epoch component losses as CSV plus a loss-curve figure."""
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)

    csv_path = out_dir / f"{name}_log.csv"
    if log:
        with csv_path.open("w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(log[0].keys()))
            writer.writeheader()
            for row in log:
                writer.writerow(row)

    fig, ax = plt.subplots(figsize=(7, 4))
    if log:
        epochs = [r["epoch"] for r in log]
        for key, style in (("total", "-"), ("seg", "--"), ("cf", ":"), ("prop", "-.")):
            ax.plot(epochs, [r[key] for r in log], style, label=key)
        ax.legend(fontsize=8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(f"Loss components: {name}")
    fig.tight_layout()
    fig_path = fig_dir / f"{name}_loss.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return {"csv": csv_path, "figure": fig_path}


def write_bench_report(results: list, out_dir: Path) -> dict[str, Path]:
    """Multi-seed debias bench: per-seed rows, mean +/- sd summary, and an
    error-rate figure.
    """
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)

    fields = ["seed", "baseline_error", "nocf_error", "cfonly_error", "full_error", "relative_reduction"]
    csv_path = out_dir / "bench.csv"
    with csv_path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(fields)
        for r in results:
            writer.writerow([getattr(r, k) for k in fields])

    arr = {k: np.array([getattr(r, k) for r in results], dtype=np.float64) for k in fields[1:]}
    txt = io.StringIO()
    txt.write(f"debias bench over {len(results)} seeds (mean +/- sd)\n")
    for k in fields[1:]:
        txt.write(f"  {k}: {arr[k].mean():.4f} +/- {arr[k].std(ddof=1) if len(results) > 1 else 0.0:.4f}\n")
    txt_path = out_dir / "bench.txt"
    txt_path.write_text(txt.getvalue())

    fig, ax = plt.subplots(figsize=(6, 4))
    labels = ["baseline", "no cf", "cf only", "cf + prop"]
    keys = ["baseline_error", "nocf_error", "cfonly_error", "full_error"]
    means = [arr[k].mean() for k in keys]
    sds = [arr[k].std(ddof=1) if len(results) > 1 else 0.0 for k in keys]
    ax.bar(labels, means, yerr=sds, capsize=4, color=["#888", "#c66", "#69c", "#396"])
    ax.set_ylabel("violating-pixel error rate")
    ax.set_title("Spurious-correlation errors before and after corrections")
    fig.tight_layout()
    fig_path = fig_dir / "bench_errors.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return {"csv": csv_path, "txt": txt_path, "figure": fig_path}
