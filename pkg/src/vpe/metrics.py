"""Sparse supervision targets, forward loss evaluation and segmentation metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import InputError, PointSet, SparseVoxelMap, VoxelConfig, check_features
from .projection import Calibs, covisible_mask
from .voxel import downsample, voxelize

DEFAULT_BIN_EDGES = (0.0, 20.0, 50.0, math.inf)
DEFAULT_BIN_NAMES = ("close", "medium", "far")


@dataclass(frozen=True)
class LossConfig:
    num_classes: int
    gamma: float = 1.0
    lam: float = 1.0
    ignore_id: Optional[int] = None

    def __post_init__(self):
        if self.num_classes < 1:
            raise InputError("num_classes must be >= 1")
        if self.gamma < 0 or self.lam < 0 or (self.gamma == 0 and self.lam == 0):
            raise InputError("loss weights must be non-negative and not both zero")
        if self.ignore_id is None:
            object.__setattr__(self, "ignore_id", self.num_classes)


def _labels(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise InputError(f"{name} must be integer class ids")
    return arr.astype(np.int64)


def _check_range(labels: np.ndarray, num_classes: int, ignore_id: int, name: str) -> None:
    bad = (labels != ignore_id) & ((labels < 0) | (labels >= num_classes))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise InputError(f"{name}[{i}] = {labels[i]} is outside [0, {num_classes}) and not the ignore id")


# ---------------------------------------------------------------- targets

def voxel_labels(points, vmap: SparseVoxelMap, num_classes: int,
                 ignore_id: Optional[int] = None) -> np.ndarray:
    """Majority-vote label of each voxel.

    Ignore-labelled points do not vote; ties go to the smallest class id;
    voxels with no voting point get ``ignore_id``.
    """
    ignore_id = num_classes if ignore_id is None else ignore_id
    labels = points.labels if isinstance(points, PointSet) else points
    if labels is None:
        raise InputError("voxel_labels needs per-point labels")
    labels = _labels(labels, "labels")
    if labels.shape[0] != vmap.num_points:
        raise InputError(f"{labels.shape[0]} labels for a map over {vmap.num_points} points")
    _check_range(labels, num_classes, ignore_id, "labels")
    vote = labels != ignore_id
    flat = vmap.point_voxel[vote] * num_classes + labels[vote]
    hist = np.bincount(flat, minlength=vmap.num_voxels * num_classes)
    hist = hist.reshape(vmap.num_voxels, num_classes)
    out = np.argmax(hist, axis=1)
    out[hist.sum(axis=1) == 0] = ignore_id
    return out


@dataclass(frozen=True)
class ScaleTarget:
    stride: int
    vmap: SparseVoxelMap
    labels: np.ndarray

    @property
    def scale(self) -> float:
        return self.vmap.scale


def multi_scale_targets(points: PointSet, cfg: VoxelConfig, strides: Sequence[int],
                        num_classes: int, ignore_id: Optional[int] = None) -> list[ScaleTarget]:
    """Voxel maps and majority-vote labels for each stride relative to ``cfg.scale``.

    Votes are always re-taken over the original points, never over
    finer-level voxel labels.
    """
    base = voxelize(points, cfg)
    out = []
    for stride in strides:
        coarse, _ = downsample(base, int(stride))
        out.append(ScaleTarget(int(stride), coarse, voxel_labels(points, coarse, num_classes, ignore_id)))
    return out


def covisible_targets(points: PointSet, calib: Calibs) -> np.ndarray:
    """Indices of the co-visible points used by the auxiliary supervision."""
    return np.flatnonzero(covisible_mask(points, calib))


# ----------------------------------------------------------------- losses

def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits) -> np.ndarray:
    return np.exp(log_softmax(check_features(logits, stage="softmax")))


def _supervised(targets, rows: int, cfg: LossConfig) -> tuple[np.ndarray, np.ndarray]:
    t = _labels(targets, "targets")
    if t.shape[0] != rows:
        raise InputError(f"{t.shape[0]} targets for {rows} rows")
    _check_range(t, cfg.num_classes, cfg.ignore_id, "targets")
    keep = np.flatnonzero(t != cfg.ignore_id)
    if keep.size == 0:
        raise InputError("no supervised voxels: every target is the ignore id")
    return keep, t[keep]


def _cross_entropy_from_logp(logp: np.ndarray, targets, cfg: LossConfig) -> float:
    keep, t = _supervised(targets, logp.shape[0], cfg)
    return float(-logp[keep, t].mean())


def cross_entropy(logits, targets, cfg: LossConfig) -> float:
    """Mean negative log-likelihood over non-ignored rows."""
    L = check_features(logits, stage="cross_entropy")
    if L.shape[1] != cfg.num_classes:
        raise InputError(f"logits have {L.shape[1]} classes, config says {cfg.num_classes}")
    return _cross_entropy_from_logp(log_softmax(L), targets, cfg)


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Lovasz extension of the Jaccard loss w.r.t. sorted errors."""
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    if gt_sorted.shape[0] > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_per_class(probs, targets, cfg: LossConfig) -> np.ndarray:
    """Lovasz-extension Jaccard loss for every class over the supervised rows.

    Classes absent from the targets are still evaluated (their value is the
    largest predicted probability for that class).
    """
    P = check_features(probs, stage="lovasz_softmax")
    if P.shape[1] != cfg.num_classes:
        raise InputError(f"probabilities have {P.shape[1]} classes, config says {cfg.num_classes}")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-5) or np.any(P < 0):
        raise InputError("probability rows must be non-negative and sum to 1 within 1e-5")
    keep, t = _supervised(targets, P.shape[0], cfg)
    P = P[keep]
    out = np.zeros(cfg.num_classes)
    for c in range(cfg.num_classes):
        fg = (t == c).astype(np.float64)
        errors = np.abs(fg - P[:, c])
        order = np.argsort(-errors, kind="stable")
        out[c] = float(np.dot(errors[order], lovasz_grad(fg[order])))
    return out


def lovasz_softmax(probs, targets, cfg: LossConfig) -> float:
    """Mean of the per-class Lovasz loss over classes present in the targets."""
    per = lovasz_per_class(probs, targets, cfg)
    _, t = _supervised(targets, np.shape(probs)[0], cfg)
    present = np.bincount(t, minlength=cfg.num_classes) > 0
    return float(per[present].mean())


def total_loss(logits, targets, cfg: LossConfig) -> float:
    """``gamma * CE + lam * Lovasz`` with the softmax computed once."""
    L = check_features(logits, stage="total_loss")
    if L.shape[1] != cfg.num_classes:
        raise InputError(f"logits have {L.shape[1]} classes, config says {cfg.num_classes}")
    logp = log_softmax(L)
    ce = _cross_entropy_from_logp(logp, targets, cfg)
    lov = lovasz_softmax(np.exp(logp), targets, cfg)
    return cfg.gamma * ce + cfg.lam * lov


# ---------------------------------------------------------------- metrics

def confusion_matrix(pred, truth, num_classes: int, ignore_id: Optional[int] = None) -> np.ndarray:
    """``cm[t, p]`` counts points of true class t predicted as p; ignored truth skipped.

    The extra last column counts predictions outside ``[0, num_classes)``
    (e.g. the ignore id for points that were never scored); they are misses
    for the true class and false positives for nothing.
    """
    ignore_id = num_classes if ignore_id is None else ignore_id
    pred = _labels(pred, "pred")
    truth = _labels(truth, "truth")
    if pred.shape != truth.shape:
        raise InputError(f"pred has {pred.shape[0]} entries, truth has {truth.shape[0]}")
    _check_range(truth, num_classes, ignore_id, "truth")
    keep = truth != ignore_id
    p, t = pred[keep], truth[keep]
    p = np.where((p < 0) | (p >= num_classes), num_classes, p)
    K1 = num_classes + 1
    return np.bincount(t * K1 + p, minlength=num_classes * K1).reshape(num_classes, K1)


def iou_from_confusion(cm: np.ndarray) -> np.ndarray:
    """Per-class TP / (TP + FP + FN); NaN where the class never occurs."""
    K = cm.shape[0]
    tp = np.diag(cm[:, :K]).astype(np.float64)
    fp = cm[:, :K].sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    union = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / np.where(union > 0, union, 1), np.nan)


def mean_iou(iou: np.ndarray, mode: str = "present") -> Optional[float]:
    """``present``: mean over defined IoUs. ``fixed``: sum over all classes / K (undefined = 0)."""
    if mode == "present":
        defined = iou[~np.isnan(iou)]
        return float(defined.mean()) if defined.size else None
    if mode == "fixed":
        return float(np.nan_to_num(iou, nan=0.0).sum() / iou.shape[0])
    raise InputError(f"unknown mIoU mode {mode!r}; expected 'present' or 'fixed'")


def _clean(x) -> Optional[float]:
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) else x


@dataclass
class EvalReport:
    num_classes: int
    per_class_iou: list
    miou: Optional[float]
    mode: str
    num_points: int
    bins: dict = field(default_factory=dict)
    co_points_miou: Optional[float] = None
    co_points: Optional[int] = None
    confusion: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        def enc(o):
            if isinstance(o, float) and math.isinf(o):
                return "inf"
            return o

        def walk(o):
            if isinstance(o, dict):
                return {k: walk(v) for k, v in o.items()}
            if isinstance(o, (list, tuple)):
                return [walk(v) for v in o]
            return enc(o)

        return json.dumps(walk(self.to_dict()), indent=2, sort_keys=True)


def _subset_miou(pred, truth, mask, num_classes, ignore_id, mode) -> Optional[float]:
    if not mask.any():
        return None
    cm = confusion_matrix(pred[mask], truth[mask], num_classes, ignore_id)
    if cm.sum() == 0:
        return None
    return mean_iou(iou_from_confusion(cm), mode)


def evaluate(pred, truth, num_classes: int, points=None, calib: Optional[Calibs] = None,
             bins: Sequence[float] = DEFAULT_BIN_EDGES, bin_names: Optional[Sequence[str]] = None,
             ignore_id: Optional[int] = None, mode: str = "present") -> EvalReport:
    """Per-class IoU, mIoU, distance-binned mIoU and co-visible-point mIoU.

    Bins are half-open ``[lo, hi)`` on the 3-D range of each point and
    need ``points``; the co-visible breakdown needs ``points`` and ``calib``.
    """
    ignore_id = num_classes if ignore_id is None else ignore_id
    pred = _labels(pred, "pred")
    truth = _labels(truth, "truth")
    if pred.shape != truth.shape:
        raise InputError(f"pred has {pred.shape[0]} entries, truth has {truth.shape[0]}")
    cm = confusion_matrix(pred, truth, num_classes, ignore_id)
    iou = iou_from_confusion(cm)
    report = EvalReport(
        num_classes=num_classes,
        per_class_iou=[_clean(v) for v in iou],
        miou=mean_iou(iou, mode),
        mode=mode,
        num_points=int(pred.shape[0]),
        confusion=cm.tolist(),
    )
    if points is None:
        return report
    coords = points.coords if isinstance(points, PointSet) else np.asarray(points, np.float64).reshape(-1, 3)
    if coords.shape[0] != pred.shape[0]:
        raise InputError(f"{coords.shape[0]} points for {pred.shape[0]} predictions")
    edges = [float(e) for e in bins]
    if any(b <= a for a, b in zip(edges[:-1], edges[1:])):
        raise InputError("distance bin edges must be strictly increasing")
    names = list(bin_names) if bin_names else (
        list(DEFAULT_BIN_NAMES) if tuple(edges) == DEFAULT_BIN_EDGES
        else [f"{lo:g}-{hi:g}" for lo, hi in zip(edges[:-1], edges[1:])])
    rng = np.linalg.norm(coords, axis=1)
    for name, lo, hi in zip(names, edges[:-1], edges[1:]):
        mask = (rng >= lo) & (rng < hi)
        report.bins[name] = {
            "range": [lo, hi],
            "points": int(mask.sum()),
            "miou": _subset_miou(pred, truth, mask, num_classes, ignore_id, mode),
        }
    if calib is not None:
        co = covisible_mask(coords, calib)
        report.co_points = int(co.sum())
        report.co_points_miou = _subset_miou(pred, truth, co, num_classes, ignore_id, mode)
    return report
