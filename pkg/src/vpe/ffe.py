"""Fine-grained feature enhancement.

Point aggregation max-pools transformed point features over the 3x3x3
voxel block around each voxel (a hash lookup per neighbour instead of a
KNN search); voxel aggregation averages voxel features one level coarser
and broadcasts them back to the points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InputError, SparseVoxelMap, check_features
from .layers import MlpSpec
from .voxel import downsample, gather, neighbor_offsets, scatter


def window_max(voxel_features: np.ndarray, vmap: SparseVoxelMap, kernel: int = 3) -> np.ndarray:
    """Elementwise max of voxel rows over each voxel's ``kernel**3`` neighbourhood."""
    out = np.array(voxel_features, dtype=np.float64, copy=True)  # centre cell is always present
    for off in neighbor_offsets(kernel, 3):
        if not any(off):
            continue
        nbr = vmap.lookup(vmap.keys + np.asarray(off, dtype=np.int64))
        hit = np.flatnonzero(nbr >= 0)
        out[hit] = np.maximum(out[hit], voxel_features[nbr[hit]])
    return out


def point_aggregate(features, vmap: SparseVoxelMap, fc: MlpSpec, fc_out: MlpSpec,
                    kernel: int = 3) -> np.ndarray:
    """F_PA: ``fc_out(concat(fc(F_p), max over neighbourhood of fc(F_q)))``."""
    F = check_features(features, rows=vmap.num_points, stage="ffe.point_aggregate")
    H = fc(F)
    if fc_out.in_features != 2 * H.shape[1]:
        raise InputError(f"fc_out expects {fc_out.in_features} channels, got {2 * H.shape[1]}")
    pooled = window_max(scatter(H, vmap, "max"), vmap, kernel)
    return fc_out(np.concatenate([H, pooled[vmap.point_voxel]], axis=1))


def voxel_aggregate(features, vmap: SparseVoxelMap, mlp: MlpSpec, stride: int = 2) -> np.ndarray:
    """F_VA: mean-scatter to voxels, average fine voxels per coarse cell, MLP, gather back."""
    if int(stride) < 2:
        raise InputError(f"voxel aggregation needs stride >= 2, got {stride}")
    F = check_features(features, rows=vmap.num_points, stage="ffe.voxel_aggregate")
    G = scatter(F, vmap, "mean")
    _, parent = downsample(vmap, stride)
    n_coarse = int(parent.max()) + 1 if parent.size else 0
    sums = np.zeros((n_coarse, G.shape[1]))
    np.add.at(sums, parent, G)
    G_avg = sums / np.bincount(parent, minlength=n_coarse)[:, None]
    return mlp(G_avg)[parent][vmap.point_voxel]


@dataclass
class FineGrainedBlock:
    fc: MlpSpec
    fc_out: MlpSpec
    mlp: MlpSpec
    head: MlpSpec
    stride: int = 2

    def __post_init__(self):
        if self.head.in_features != self.fc_out.out_features + self.mlp.out_features:
            raise InputError("head width must equal F_PA width + F_VA width")

    @classmethod
    def random(cls, channels: int, rng, stride: int = 2) -> "FineGrainedBlock":
        C = channels
        return cls(
            fc=MlpSpec.random([C, C], rng, ["relu"]),
            fc_out=MlpSpec.random([2 * C, C], rng, ["relu"]),
            mlp=MlpSpec.random([C, C], rng, ["relu"]),
            head=MlpSpec.random([2 * C, C], rng, ["relu"]),
            stride=stride,
        )

    def tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name in ("fc", "fc_out", "mlp", "head"):
            out.update(getattr(self, name).tensors(f"{prefix}.{name}"))
        return out

    def __call__(self, features, vmap: SparseVoxelMap, trace: dict | None = None) -> np.ndarray:
        return ffe_forward(features, vmap, self, trace)


def ffe_forward(features, vmap: SparseVoxelMap, block: FineGrainedBlock,
                trace: dict | None = None) -> np.ndarray:
    f_pa = point_aggregate(features, vmap, block.fc, block.fc_out)
    f_va = voxel_aggregate(features, vmap, block.mlp, block.stride)
    out = block.head(np.concatenate([f_pa, f_va], axis=1))
    if trace is not None:
        trace.update({"ffe_pa": f_pa, "ffe_va": f_va, "ffe_out": out})
    return out
