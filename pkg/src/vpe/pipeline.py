"""End-to-end forward pass: filter -> merge -> encode -> classify -> evaluate."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import InputError, NumericError, PointSet, VPEError, check_features, crop
from .filtering import FilterStats, filter_virtual, merge
from .io import PipelineConfig
from .metrics import EvalReport, LossConfig, evaluate, multi_scale_targets, total_loss
from .model import SegmentationNet
from .projection import Calibs
from .voxel import scatter

STAGES = ("filter", "merge", "encode", "head", "loss", "evaluate")


class PipelineError(VPEError):
    """A pipeline stage failed; carries the stage name and a digest of its inputs."""

    def __init__(self, stage: str, digest: str, cause: Exception):
        self.stage = stage
        self.digest = digest
        self.cause = cause
        self.exit_code = 3 if isinstance(cause, (NumericError, FloatingPointError)) else 2
        super().__init__(f"stage '{stage}' failed (input digest {digest}): {cause}")


def digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        if a is None:
            continue
        if isinstance(a, PointSet):
            for part in (a.coords, a.intensity, a.origin, a.labels):
                if part is not None:
                    h.update(np.ascontiguousarray(part).tobytes())
        else:
            h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


@dataclass
class PipelineResult:
    pred: np.ndarray  # class per input real point; ignore id outside the crop
    logits: np.ndarray  # per merged point
    merged: PointSet
    num_real: int
    filter_stats: Optional[FilterStats]
    report: Optional[EvalReport]
    losses: dict = field(default_factory=dict)
    trace: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "num_real": self.num_real,
            "num_merged": len(self.merged),
            "filter": None if self.filter_stats is None else self.filter_stats.to_dict(),
            "losses": self.losses,
            "report": None if self.report is None else self.report.to_dict(),
        }


def run_pipeline(cfg: PipelineConfig, real: PointSet, virtual: Optional[PointSet] = None,
                 calib: Optional[Calibs] = None, net: Optional[SegmentationNet] = None,
                 keep_trace: bool = False) -> PipelineResult:
    """Run every stage; a failure raises :class:`PipelineError` naming the stage."""
    trace: dict = {}

    def stage(name, fn, *inputs):
        try:
            with np.errstate(over="raise", invalid="raise", divide="raise"):
                return fn()
        except (VPEError, FloatingPointError, ValueError) as exc:
            if isinstance(exc, PipelineError):
                raise
            raise PipelineError(name, digest(*inputs), exc) from exc

    n_input = len(real)
    in_crop = np.flatnonzero(cfg.voxel_config.inside(real.coords))
    real = real.subset(in_crop) if len(in_crop) < n_input else real
    if len(real) == 0:
        raise PipelineError("filter", digest(real), InputError("no real points inside the crop bounds"))
    if virtual is not None:
        virtual = crop(virtual, cfg.voxel_config)

    stats = None
    pseudo = PointSet.empty()
    if virtual is not None and len(virtual) and cfg.filter_enabled:
        pseudo, stats = stage("filter", lambda: filter_virtual(real, virtual, calib, cfg.filter), real, virtual)
    elif virtual is not None and len(virtual):
        pseudo = virtual
    if len(pseudo) and pseudo.labels is None and real.labels is not None:
        pseudo = pseudo.with_labels(np.full(len(pseudo), cfg.ignore_id))
    merged = stage("merge", lambda: merge(real, pseudo) if len(pseudo) else real, real, pseudo)

    if net is None:
        net = SegmentationNet.random(cfg)
    feats = stage("encode", lambda: net.encode(merged, calib, cfg, trace if keep_trace else None), merged)
    logits = stage("head", lambda: check_features(net.classifier(feats), stage="head"), feats)
    if keep_trace:
        trace["final_features"] = feats
        trace["logits"] = logits
    n_real = len(real)
    pred = np.full(n_input, cfg.ignore_id, dtype=np.int64)
    pred[in_crop] = np.argmax(logits[:n_real], axis=1)
    truth = None
    if real.labels is not None:
        truth = np.full(n_input, cfg.ignore_id, dtype=np.int64)
        truth[in_crop] = real.labels

    losses: dict = {}
    report = None
    if real.labels is not None:
        lcfg = LossConfig(cfg.num_classes, cfg.gamma, cfg.lam, cfg.ignore_id)

        def compute_losses():
            out = {}
            labels = merged.labels if merged.labels is not None else np.concatenate(
                [real.labels, np.full(len(merged) - n_real, cfg.ignore_id)])
            lab_points = merged.with_labels(labels)
            if np.any(labels != cfg.ignore_id):
                out["point"] = total_loss(logits, labels, lcfg)
            for tgt in multi_scale_targets(lab_points, cfg.voxel_config, cfg.strides,
                                           cfg.num_classes, cfg.ignore_id):
                if np.all(tgt.labels == cfg.ignore_id):
                    continue
                vlogits = scatter(logits, tgt.vmap, "mean")
                out[f"stride{tgt.stride}"] = total_loss(vlogits, tgt.labels, lcfg)
            return out

        losses = stage("loss", compute_losses, logits)
        report = stage("evaluate", lambda: evaluate(
            pred[in_crop], truth[in_crop], cfg.num_classes, points=real, calib=calib, bins=cfg.bins,
            ignore_id=cfg.ignore_id, mode=cfg.miou_mode), pred, truth)
    return PipelineResult(pred=pred, logits=logits, merged=merged, num_real=n_real,
                          filter_stats=stats, report=report, losses=losses,
                          trace=trace if keep_trace else {})
