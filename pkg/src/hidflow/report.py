"""Report rendering: CSV rows plus matplotlib figures saved next to them."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_csv(path: str, rows: list[dict], columns: list[str]):
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    os.replace(tmp, path)


def metrics_figure(rows: list[dict], path: str):
    """Bar panels of PSNR / SSIM / SAM per evaluated pair."""
    labels = [str(r.get("name", i)) for i, r in enumerate(rows)]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    for ax, key, title in zip(axes, ("psnr", "ssim", "sam"),
                              ("PSNR (dB)", "SSIM", "SAM (rad)")):
        vals = [r[key] if r[key] != float("inf") else float("nan") for r in rows]
        ax.bar(range(len(vals)), vals, color="#4878a8")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_title(title, fontsize=10)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def training_figure(history: list[dict], path: str):
    """Loss curves and validation PSNR over epochs."""
    epochs = list(range(len(history)))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [h["total"] for h in history], label="total", color="#303030")
    ax.plot(epochs, [h["rec"] for h in history], label="rec", color="#4878a8")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    val = [h.get("val_psnr", float("nan")) for h in history]
    if any(v == v for v in val):  # any non-NaN
        ax2 = ax.twinx()
        ax2.plot(epochs, val, label="val PSNR", color="#b0562c", linestyle="--")
        ax2.set_ylabel("val PSNR (dB)")
        lines, labels = ax.get_legend_handles_labels()
        l2, lab2 = ax2.get_legend_handles_labels()
        ax.legend(lines + l2, labels + lab2, loc="best", fontsize=8)
    else:
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
