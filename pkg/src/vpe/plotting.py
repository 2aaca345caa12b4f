"""Report figures written next to the JSON/CSV outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REPORT_RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # keep PNG output byte-stable across runs
    "svg.hashsalt": "vpe",
}


def _bar(ax, labels, values, color):
    xs = range(len(labels))
    heights = [0.0 if v is None else v for v in values]
    bars = ax.bar(xs, heights, color=color, width=0.6)
    for b, v in zip(bars, values):
        txt = "n/a" if v is None else f"{v:.2f}"
        ax.annotate(txt, (b.get_x() + b.get_width() / 2, b.get_height()),
                    ha="center", va="bottom", fontsize=7, xytext=(0, 2), textcoords="offset points")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=30 if len(labels) > 6 else 0, ha="right" if len(labels) > 6 else "center")
    ax.set_ylim(0, 1.08)


def plot_class_iou(report, path, class_names: Optional[Sequence[str]] = None) -> Path:
    names = list(class_names) if class_names else [str(i) for i in range(report.num_classes)]
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=(max(3.5, 0.45 * len(names) + 1.5), 2.6))
        _bar(ax, names, report.per_class_iou, "#4c72b0")
        miou = "n/a" if report.miou is None else f"{report.miou:.3f}"
        ax.set_title(f"Per-class IoU (mIoU {miou})")
        ax.set_ylabel("IoU")
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return Path(path)


def plot_distance_bins(report, path) -> Path:
    names = list(report.bins)
    values = [report.bins[n]["miou"] for n in names]
    counts = [report.bins[n]["points"] for n in names]
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=(3.6, 2.6))
        _bar(ax, [f"{n}\n(n={c})" for n, c in zip(names, counts)], values, "#dd8452")
        ax.set_title("mIoU by range")
        ax.set_ylabel("mIoU")
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return Path(path)


def plot_report(report, out_dir, class_names: Optional[Sequence[str]] = None) -> list[Path]:
    """Write every figure the report supports; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [plot_class_iou(report, out_dir / "class_iou.png", class_names)]
    if report.bins:
        paths.append(plot_distance_bins(report, out_dir / "distance_bins.png"))
    return paths
