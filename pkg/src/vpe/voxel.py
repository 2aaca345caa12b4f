"""Hash-style voxelisation and point/voxel feature transfer.

Voxels are stored in lexicographic key order (not hash order) so every
result is reproducible across runs and platforms.
"""

from __future__ import annotations

import itertools
from typing import Union

import numpy as np

from .core import InputError, PointSet, SparseVoxelMap, VoxelConfig, check_features, pack_keys


def quantize(coords: np.ndarray, scale: float) -> np.ndarray:
    """Floor-quantise coordinates (toward -inf) to integer voxel keys."""
    return np.floor(np.asarray(coords, dtype=np.float64) / scale).astype(np.int64)


def map_from_point_keys(point_keys: np.ndarray, scale: float) -> SparseVoxelMap:
    """Group points by their integer key into a :class:`SparseVoxelMap`."""
    point_keys = np.asarray(point_keys, dtype=np.int64).reshape(-1, 3)
    n = point_keys.shape[0]
    if n == 0:
        return SparseVoxelMap(
            keys=np.zeros((0, 3), np.int64),
            point_voxel=np.zeros(0, np.int64),
            order=np.zeros(0, np.int64),
            starts=np.zeros(1, np.int64),
            scale=float(scale),
        )
    codes = pack_keys(point_keys)
    # stable sort keeps members of a voxel in ascending point index
    order = np.argsort(codes, kind="stable")
    sorted_codes = codes[order]
    new = np.empty(n, dtype=bool)
    new[0] = True
    np.not_equal(sorted_codes[1:], sorted_codes[:-1], out=new[1:])
    first = np.flatnonzero(new)
    starts = np.append(first, n).astype(np.int64)
    voxel_of_sorted = np.cumsum(new) - 1
    point_voxel = np.empty(n, dtype=np.int64)
    point_voxel[order] = voxel_of_sorted
    keys = point_keys[order[first]]
    return SparseVoxelMap(keys=keys, point_voxel=point_voxel, order=order, starts=starts,
                          scale=float(scale))


def voxelize(points: Union[PointSet, np.ndarray], cfg: Union[VoxelConfig, float]) -> SparseVoxelMap:
    """Voxelise points with key ``floor(p / scale)``.

    An empty point set yields an empty map.
    """
    coords = points.coords if isinstance(points, PointSet) else np.asarray(points, np.float64)
    scale = cfg.scale if isinstance(cfg, VoxelConfig) else float(cfg)
    if not scale > 0:
        raise InputError(f"voxel scale must be positive, got {scale}")
    return map_from_point_keys(quantize(coords.reshape(-1, 3), scale), scale)


def scatter(features, vmap: SparseVoxelMap, reduce: str = "mean") -> np.ndarray:
    """Reduce per-point rows into per-voxel rows (voxel rows in key order)."""
    F = check_features(features, stage="scatter")
    if F.shape[0] != vmap.num_points:
        raise InputError(f"scatter: features have {F.shape[0]} rows, map has {vmap.num_points} points")
    if vmap.num_voxels == 0:
        return np.zeros((0, F.shape[1]))
    ufunc = {"mean": np.add, "sum": np.add, "max": np.maximum}.get(reduce)
    if ufunc is None:
        raise InputError(f"unknown reduction {reduce!r}; expected 'mean', 'max' or 'sum'")
    # reduceat runs much faster along the contiguous axis; member order is unchanged
    channel_major = np.ascontiguousarray(F[vmap.order].T)
    out = ufunc.reduceat(channel_major, vmap.starts[:-1], axis=1).T
    if reduce == "mean":
        out = out / vmap.counts[:, None]
    return np.ascontiguousarray(out)


def gather(voxel_features, vmap: SparseVoxelMap) -> np.ndarray:
    """Copy each voxel's row to all of its member points."""
    G = check_features(voxel_features, stage="gather")
    if G.shape[0] != vmap.num_voxels:
        raise InputError(f"gather: got {G.shape[0]} voxel rows, map has {vmap.num_voxels} voxels")
    return G[vmap.point_voxel]


def downsample(vmap: SparseVoxelMap, stride: int) -> tuple[SparseVoxelMap, np.ndarray]:
    """Coarsen a map by an integer stride.

    Returns the coarse map (over the same points) and ``parent_index``, the
    coarse voxel row of every fine voxel. Coarse key is
    ``floor(fine_key / stride)``.
    """
    stride = int(stride)
    if stride < 1:
        raise InputError(f"downsample stride must be >= 1, got {stride}")
    if stride == 1:
        return vmap, np.arange(vmap.num_voxels, dtype=np.int64)
    fine_parent_keys = np.floor_divide(vmap.keys, stride)
    coarse = map_from_point_keys(fine_parent_keys[vmap.point_voxel], vmap.scale * stride)
    parent_index = coarse.lookup(fine_parent_keys)
    return coarse, parent_index


def neighbor_offsets(kernel: int = 3, dims: int = 3) -> list[tuple[int, ...]]:
    """All integer offsets of a ``kernel**dims`` window, lexicographically ordered."""
    if kernel < 1 or kernel % 2 == 0:
        raise InputError(f"kernel size must be a positive odd integer, got {kernel}")
    if dims not in (2, 3):
        raise InputError(f"dims must be 2 or 3, got {dims}")
    r = (kernel - 1) // 2
    return list(itertools.product(range(-r, r + 1), repeat=dims))
