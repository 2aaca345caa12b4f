"""Domain types shared across the package.

Feature matrices are plain ``float64`` numpy arrays of shape ``(rows, C)``;
:func:`check_features` is the one place their invariants are enforced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

REAL = 0
VIRTUAL = 1

# Default crop bounds (metres).
NUSCENES_CROP = ((-50.0, -50.0, -4.0), (50.0, 50.0, 3.0))
SEMANTICKITTI_CROP = ((-51.2, -51.2, -4.0), (51.2, 51.2, 2.0))

# 21 bits per packed axis, signed range [-2**20, 2**20).
_KEY_BITS = 21
_KEY_BIAS = 1 << (_KEY_BITS - 1)


class VPEError(Exception):
    """Base class for all package errors."""


class InputError(VPEError, ValueError):
    """Malformed or inconsistent input data."""


class NumericError(VPEError, ArithmeticError):
    """A computation produced NaN/Inf."""

    def __init__(self, stage: str, detail: str = ""):
        self.stage = stage
        msg = f"non-finite values in stage '{stage}'"
        super().__init__(f"{msg}: {detail}" if detail else msg)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def check_features(data, rows: Optional[int] = None, stage: str = "features") -> np.ndarray:
    """Validate a feature matrix and return it as a 2-D float64 array."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InputError(f"{stage}: expected a 2-D feature matrix, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise InputError(f"{stage}: expected {rows} rows, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(stage)
    return arr


@dataclass(frozen=True, eq=False)
class PointSet:
    """N points with intensity, optional labels/features and a real/virtual tag."""

    coords: np.ndarray
    intensity: np.ndarray
    labels: Optional[np.ndarray] = None
    origin: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(coords)):
            bad = int(np.flatnonzero(~np.isfinite(coords).all(axis=1))[0])
            raise InputError(f"point {bad} has non-finite coordinates")
        n = coords.shape[0]
        intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if intensity.shape[0] != n:
            raise InputError(f"intensity has {intensity.shape[0]} rows, expected {n}")
        origin = self.origin
        origin = (np.full(n, REAL, dtype=np.uint8) if origin is None
                  else np.asarray(origin, dtype=np.uint8).reshape(-1))
        if origin.shape[0] != n:
            raise InputError(f"origin has {origin.shape[0]} rows, expected {n}")
        object.__setattr__(self, "coords", _frozen(coords))
        object.__setattr__(self, "intensity", _frozen(intensity))
        object.__setattr__(self, "origin", _frozen(origin))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if labels.shape[0] != n:
                raise InputError(f"labels has {labels.shape[0]} rows, expected {n}")
            object.__setattr__(self, "labels", _frozen(labels))
        if self.features is not None:
            object.__setattr__(self, "features", _frozen(check_features(self.features, n)))

    def __len__(self) -> int:
        return self.coords.shape[0]

    @classmethod
    def empty(cls) -> "PointSet":
        return cls(np.zeros((0, 3)), np.zeros(0))

    @property
    def is_virtual(self) -> np.ndarray:
        return self.origin == VIRTUAL

    def subset(self, index) -> "PointSet":
        idx = np.asarray(index)
        return PointSet(
            self.coords[idx],
            self.intensity[idx],
            None if self.labels is None else self.labels[idx],
            self.origin[idx],
            None if self.features is None else self.features[idx],
        )

    def with_labels(self, labels) -> "PointSet":
        return PointSet(self.coords, self.intensity, labels, self.origin, self.features)

    @staticmethod
    def concat(sets: Sequence["PointSet"]) -> "PointSet":
        sets = list(sets)
        if not sets:
            return PointSet.empty()
        has_labels = all(s.labels is not None for s in sets)
        has_feats = all(s.features is not None for s in sets)
        return PointSet(
            np.concatenate([s.coords for s in sets]),
            np.concatenate([s.intensity for s in sets]),
            np.concatenate([s.labels for s in sets]) if has_labels else None,
            np.concatenate([s.origin for s in sets]),
            np.concatenate([s.features for s in sets]) if has_feats else None,
        )


@dataclass(frozen=True)
class VoxelConfig:
    scale: float
    scene_min: tuple = NUSCENES_CROP[0]
    scene_max: tuple = NUSCENES_CROP[1]

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise InputError(f"voxel scale must be positive, got {self.scale}")
        lo = tuple(float(v) for v in self.scene_min)
        hi = tuple(float(v) for v in self.scene_max)
        if len(lo) != 3 or len(hi) != 3 or not all(a < b for a, b in zip(lo, hi)):
            raise InputError(f"crop bounds must satisfy min < max per axis: {lo} -> {hi}")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "scene_min", lo)
        object.__setattr__(self, "scene_max", hi)

    def with_scale(self, scale: float) -> "VoxelConfig":
        return VoxelConfig(scale, self.scene_min, self.scene_max)

    def inside(self, coords: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.scene_min)
        hi = np.asarray(self.scene_max)
        return np.all((coords >= lo) & (coords < hi), axis=1)


def crop(points: PointSet, cfg: VoxelConfig) -> PointSet:
    """Drop points outside the half-open crop box ``[scene_min, scene_max)``."""
    keep = cfg.inside(points.coords)
    return points if keep.all() else points.subset(np.flatnonzero(keep))


def pack_keys(keys: np.ndarray) -> np.ndarray:
    """Pack integer sites (up to 3 columns) into int64 codes.

    Code order equals lexicographic order of the rows, so sorting codes
    sorts keys.
    """
    keys = np.asarray(keys, dtype=np.int64)
    if keys.ndim != 2 or not 1 <= keys.shape[1] <= 3:
        raise InputError(f"cannot pack keys of shape {keys.shape}")
    if keys.size and (keys.min() < -_KEY_BIAS or keys.max() >= _KEY_BIAS):
        raise InputError("integer site coordinates exceed the packable range +-2**20")
    code = np.zeros(keys.shape[0], dtype=np.int64)
    for j in range(keys.shape[1]):
        code = (code << _KEY_BITS) | (keys[:, j] + _KEY_BIAS)
    return code


class SiteIndex:
    """Sorted, de-duplicated integer sites with O(log M) vectorised lookup."""

    def __init__(self, sites: np.ndarray):
        sites = np.asarray(sites, dtype=np.int64)
        self.sites = _frozen(sites)
        self.codes = _frozen(pack_keys(sites)) if len(sites) else np.zeros(0, np.int64)
        if len(self.codes) > 1 and not np.all(np.diff(self.codes) > 0):
            raise InputError("sites must be unique and lexicographically sorted")

    def __len__(self) -> int:
        return self.sites.shape[0]

    def lookup(self, query: np.ndarray) -> np.ndarray:
        """Row index of each query site, or -1 where absent."""
        query = np.asarray(query, dtype=np.int64)
        out = np.full(query.shape[0], -1, dtype=np.int64)
        if len(self.codes) == 0 or query.shape[0] == 0:
            return out
        # out-of-range neighbours cannot be present
        ok = np.all((query >= -_KEY_BIAS) & (query < _KEY_BIAS), axis=1)
        q = pack_keys(query[ok])
        pos = np.searchsorted(self.codes, q)
        pos_c = np.minimum(pos, len(self.codes) - 1)
        hit = self.codes[pos_c] == q
        found = np.where(hit, pos_c, -1)
        out[ok] = found
        return out


@dataclass(frozen=True, eq=False)
class SparseVoxelMap:
    """Non-empty voxels in lexicographic key order with CSR point membership.

    ``point_voxel[i]`` is the row of the voxel containing point ``i``;
    ``order[starts[v]:starts[v + 1]]`` lists voxel ``v``'s member points in
    ascending index order.
    """

    keys: np.ndarray
    point_voxel: np.ndarray
    order: np.ndarray
    starts: np.ndarray
    scale: float
    index: SiteIndex = field(repr=False, default=None)

    def __post_init__(self):
        if self.index is None:
            object.__setattr__(self, "index", SiteIndex(self.keys))

    @property
    def num_voxels(self) -> int:
        return self.keys.shape[0]

    @property
    def num_points(self) -> int:
        return self.point_voxel.shape[0]

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.starts)

    def members(self, v: int) -> np.ndarray:
        return self.order[self.starts[v]:self.starts[v + 1]]

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        return self.index.lookup(np.asarray(keys).reshape(-1, 3))


@dataclass(frozen=True, eq=False)
class CalibrationModel:
    """Pinhole camera with a LiDAR-to-camera rigid transform."""

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    image_size: tuple  # (H, W)

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InputError("calibration contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6:
            raise InputError("rotation R is not orthonormal within 1e-6")
        H, W = (int(v) for v in self.image_size)
        if H <= 0 or W <= 0:
            raise InputError(f"image size must be positive, got {(H, W)}")
        object.__setattr__(self, "K", _frozen(K))
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "image_size", (H, W))

    @property
    def T(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    @property
    def height(self) -> int:
        return self.image_size[0]

    @property
    def width(self) -> int:
        return self.image_size[1]


def build_initial_features(points: PointSet, cfg: VoxelConfig) -> np.ndarray:
    """Initial per-point features, shape ``(N, 10)``.

    Columns: ``x, y, z, intensity``, position inside the voxel normalised to
    ``[0, 1)`` (3 columns), offset from the voxel centre in metres (3 columns).
    The voxel grid is anchored at ``cfg.scene_min``.
    """
    n = len(points)
    if n == 0:
        raise InputError("cannot build features for an empty point set")
    inside = cfg.inside(points.coords)
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise InputError(f"point {bad} at {points.coords[bad].tolist()} lies outside the crop bounds")
    s = cfg.scale
    u = (points.coords - np.asarray(cfg.scene_min)) / s
    frac = u - np.floor(u)
    # guard fp rounding at the upper edges of both half-open ranges
    frac = np.minimum(frac, np.nextafter(1.0, 0.0))
    offset = np.minimum((frac - 0.5) * s, np.nextafter(s / 2, 0.0))
    return np.concatenate(
        [points.coords, points.intensity[:, None], frac, offset], axis=1
    )
