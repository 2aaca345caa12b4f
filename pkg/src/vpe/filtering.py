"""Spatial difference-driven adaptive filtering of virtual points.

Two passes:

1. pixel-radius prefilter -- keep virtual points whose image projection
   lies within ``radius`` pixels of a projected co-visible real point;
2. adaptive selection -- for every non-empty real voxel at scale ``s``,
   take the ``N`` virtual points of the co-located virtual voxel nearest
   to the real centroid, where ``N = round(a * s * (rho + ceil(d / b)))``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .core import VIRTUAL, InputError, PointSet, SparseVoxelMap
from .projection import Calibs, _as_list, project
from .voxel import quantize, scatter, voxelize


@dataclass(frozen=True)
class FilterParams:
    """Filter hyperparameters (nuScenes defaults)."""

    a: float = 5.0
    b: float = 20.0
    s: float = 0.4
    D: float = 10.0
    prefilter_radius: float = 2.0

    def __post_init__(self):
        for name in ("a", "b", "s", "D", "prefilter_radius"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise InputError(f"filter parameter {name} must be positive, got {v}")

    @classmethod
    def nuscenes(cls, **kw) -> "FilterParams":
        return cls(**{"s": 0.4, "D": 10.0, **kw})

    @classmethod
    def semantickitti(cls, **kw) -> "FilterParams":
        return cls(**{"s": 0.2, "D": 20.0, **kw})


@dataclass(frozen=True)
class DensityStats:
    rho_near: float
    rho_far: float
    rho: float
    near_voxels: int
    far_voxels: int
    near_points: int
    far_points: int

    @property
    def far_empty(self) -> bool:
        return self.far_voxels == 0

    @property
    def near_empty(self) -> bool:
        return self.near_voxels == 0


@dataclass(frozen=True)
class FilterStats:
    kept: int
    total_virtual: int
    total_real: int
    percent_virtual: float
    prefiltered: int
    rho: float
    rho_near: float
    rho_far: float
    far_empty: bool

    def to_dict(self) -> dict:
        return asdict(self)


def budget(a, s, rho, d, b):
    """Per-voxel pseudo-point budget, rounded half away from zero.

    Works elementwise on arrays. A relative slack of 1e-9 keeps exact
    halves (e.g. 2.5 computed as 2.4999999999999996) rounding up.
    """
    x = np.asarray(a * s * (rho + np.ceil(np.asarray(d, dtype=np.float64) / b)), dtype=np.float64)
    r = np.sign(x) * np.floor(np.abs(x) + 0.5 + 1e-9 * np.maximum(1.0, np.abs(x)))
    r = r.astype(np.int64)
    return int(r) if r.ndim == 0 else r


def prefilter_indices(real: PointSet, virtual: PointSet, calib: Calibs, radius: float = 2.0) -> np.ndarray:
    """Indices of virtual points within ``radius`` pixels of a co-visible real point.

    Distances are compared per camera on continuous pixel coordinates; a
    virtual point survives if it qualifies in any camera.
    """
    if not radius > 0:
        raise InputError(f"prefilter radius must be positive, got {radius}")
    keep = np.zeros(len(virtual), dtype=bool)
    if len(real) == 0 or len(virtual) == 0:
        return np.flatnonzero(keep)
    for c in _as_list(calib):
        pr = project(real, c)
        pv = project(virtual, c)
        if not pr.valid.any() or not pv.valid.any():
            continue
        tree = cKDTree(pr.uv[pr.valid])
        cand = np.flatnonzero(pv.valid & ~keep)
        dist, _ = tree.query(pv.uv[cand], k=1, distance_upper_bound=radius * (1 + 1e-12) + 1e-12)
        keep[cand[dist <= radius]] = True
    return np.flatnonzero(keep)


def prefilter_by_pixel_radius(real: PointSet, virtual: PointSet, calib: Calibs,
                              radius: float = 2.0) -> PointSet:
    return virtual.subset(prefilter_indices(real, virtual, calib, radius))


def voxel_centroids(coords: np.ndarray, vmap: SparseVoxelMap) -> np.ndarray:
    return scatter(coords, vmap, "mean")


def scene_density_stats(real_coords: np.ndarray, real_map: SparseVoxelMap, D: float) -> DensityStats:
    """Points-per-voxel on each side of the distance boundary ``D``.

    Voxels are assigned by the range of their point centroid
    (``d < D`` near, otherwise far). An empty side has density 0.
    ``rho = max(0, rho_near - rho_far)``.
    """
    if real_map.num_voxels == 0:
        return DensityStats(0.0, 0.0, 0.0, 0, 0, 0, 0)
    d = np.linalg.norm(voxel_centroids(real_coords, real_map), axis=1)
    near = d < D
    counts = real_map.counts
    nv, fv = int(near.sum()), int((~near).sum())
    npts, fpts = int(counts[near].sum()), int(counts[~near].sum())
    rho_near = npts / nv if nv else 0.0
    rho_far = fpts / fv if fv else 0.0
    return DensityStats(rho_near, rho_far, max(0.0, rho_near - rho_far), nv, fv, npts, fpts)


def adaptive_select_indices(real: PointSet, virtual: PointSet, params: FilterParams,
                            density: Optional[DensityStats] = None) -> tuple[np.ndarray, DensityStats]:
    """Indices of the selected virtual points, ordered by (voxel key, index).

    Within a voxel, candidates are ranked by distance to the real centroid,
    then by coordinates, then by index.
    """
    real_map = voxelize(real, params.s)
    if density is None:
        density = scene_density_stats(real.coords, real_map, params.D)
    if real_map.num_voxels == 0 or len(virtual) == 0:
        return np.zeros(0, dtype=np.int64), density
    centroids = voxel_centroids(real.coords, real_map)
    d = np.linalg.norm(centroids, axis=1)
    quota = budget(params.a, params.s, density.rho, d, params.b)

    host = real_map.lookup(quantize(virtual.coords, params.s))
    cand = np.flatnonzero(host >= 0)
    if cand.size == 0:
        return np.zeros(0, dtype=np.int64), density
    g = host[cand]
    xyz = virtual.coords[cand]
    dist = np.linalg.norm(xyz - centroids[g], axis=1)
    order = np.lexsort((cand, xyz[:, 2], xyz[:, 1], xyz[:, 0], dist, g))
    g_sorted = g[order]
    run_start = np.ones(len(order), dtype=bool)
    run_start[1:] = g_sorted[1:] != g_sorted[:-1]
    first = np.maximum.accumulate(np.where(run_start, np.arange(len(order)), 0))
    rank = np.arange(len(order)) - first
    chosen = order[rank < quota[g_sorted]]
    sel = cand[chosen]
    # final order: voxel key (= voxel row), then point index
    final = np.lexsort((sel, host[sel]))
    return sel[final], density


def adaptive_select(real: PointSet, virtual: PointSet, params: FilterParams,
                    prefiltered_from: Optional[int] = None) -> tuple[PointSet, FilterStats]:
    """Select reliable pseudo points from (already prefiltered) virtual points.

    ``prefiltered_from`` is the virtual count before prefiltering, recorded
    in the stats; defaults to ``len(virtual)``.
    """
    idx, dens = adaptive_select_indices(real, virtual, params)
    selected = virtual.subset(idx)
    kept = len(selected)
    total = kept + len(real)
    stats = FilterStats(
        kept=kept,
        total_virtual=len(virtual) if prefiltered_from is None else int(prefiltered_from),
        total_real=len(real),
        percent_virtual=100.0 * kept / total if total else 0.0,
        prefiltered=len(virtual),
        rho=dens.rho,
        rho_near=dens.rho_near,
        rho_far=dens.rho_far,
        far_empty=dens.far_empty,
    )
    return selected, stats


def filter_virtual(real: PointSet, virtual: PointSet, calib: Optional[Calibs],
                   params: FilterParams) -> tuple[PointSet, FilterStats]:
    """Prefilter (when a calibration is given) then adaptively select."""
    if calib is not None:
        pre = prefilter_by_pixel_radius(real, virtual, calib, params.prefilter_radius)
    else:
        pre = virtual
    return adaptive_select(real, pre, params, prefiltered_from=len(virtual))


def as_virtual(points: PointSet) -> PointSet:
    """Tag points as virtual; intensity is zeroed since virtual points carry no return strength."""
    return PointSet(points.coords, np.zeros(len(points)), points.labels,
                    np.full(len(points), VIRTUAL, dtype=np.uint8), points.features)


def merge(real: PointSet, pseudo: PointSet) -> PointSet:
    """Concatenate real points (first, unchanged) with pseudo points."""
    return PointSet.concat([real, as_virtual(pseudo)])
