"""Write evaluation reports as JSON, CSV tables and figures."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional, Sequence

from .metrics import EvalReport


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_class_csv(report: EvalReport, path, class_names: Optional[Sequence[str]] = None) -> None:
    names = list(class_names) if class_names else [str(i) for i in range(report.num_classes)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "name", "iou", "support"])
        for c, (name, iou) in enumerate(zip(names, report.per_class_iou)):
            support = sum(report.confusion[c]) if report.confusion else ""
            w.writerow([c, name, _fmt(iou), support])
        w.writerow(["", "mIoU", _fmt(report.miou), ""])


def write_bins_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin", "lower_m", "upper_m", "points", "miou"])
        for name, b in report.bins.items():
            lo, hi = b["range"]
            w.writerow([name, _fmt(lo), _fmt(hi), b["points"], _fmt(b["miou"])])
        if report.co_points is not None:
            w.writerow(["co_visible", "", "", report.co_points, _fmt(report.co_points_miou)])


def write_report(report: EvalReport, out_dir, class_names: Optional[Sequence[str]] = None,
                 plots: bool = True) -> list[Path]:
    """``report.json``, ``class_iou.csv``, ``distance_bins.csv`` and (optionally) PNG figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "report.json", out_dir / "class_iou.csv"]
    written[0].write_text(report.to_json() + "\n")
    write_class_csv(report, written[1], class_names)
    if report.bins or report.co_points is not None:
        written.append(out_dir / "distance_bins.csv")
        write_bins_csv(report, written[-1])
    if plots:
        from .plotting import plot_report

        written.extend(plot_report(report, out_dir, class_names))
    return written


def _sanitize(o):
    if isinstance(o, dict):
        return {str(k): _sanitize(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_sanitize(v) for v in o]
    if hasattr(o, "tolist"):
        return _sanitize(o.tolist())
    if isinstance(o, float) and math.isinf(o):
        return "inf" if o > 0 else "-inf"
    return o


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_sanitize(obj), indent=2, sort_keys=True) + "\n")
