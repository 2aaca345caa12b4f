"""Noise-robust feature extraction: parallel 3-D voxel and 2-D image
submanifold convolutions, a fusing MLP, and a sigmoid gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InputError, NumericError, SparseVoxelMap, check_features
from .layers import MlpSpec, SubmanifoldKernel, sigmoid, submanifold_conv
from .projection import SparseImageMap
from .voxel import gather, scatter


def _finite(x: np.ndarray, stage: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(stage)
    return x


@dataclass
class NoiseRobustBlock:
    k3: SubmanifoldKernel
    k2: SubmanifoldKernel
    fuse: MlpSpec
    gate: MlpSpec

    def __post_init__(self):
        if self.k3.dims != 3 or self.k2.dims != 2:
            raise InputError("k3 must be a 3-D kernel and k2 a 2-D kernel")
        if self.fuse.in_features != self.k3.out_channels + self.k2.out_channels:
            raise InputError(
                f"fuse MLP takes {self.fuse.in_features} channels, branches give "
                f"{self.k3.out_channels + self.k2.out_channels}"
            )
        if self.gate.in_features != self.fuse.out_features or self.gate.out_features != self.fuse.out_features:
            raise InputError("gate MLP must map the fused width onto itself")

    @classmethod
    def random(cls, channels: int, rng) -> "NoiseRobustBlock":
        C = channels
        return cls(
            k3=SubmanifoldKernel.random(3, C, C, rng),
            k2=SubmanifoldKernel.random(2, C, C, rng),
            fuse=MlpSpec.random([2 * C, C], rng, ["relu"]),
            gate=MlpSpec.random([C, C], rng, ["none"]),
        )

    def tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {
            f"{prefix}.k3.weight": self.k3.weights, f"{prefix}.k3.bias": self.k3.bias,
            f"{prefix}.k2.weight": self.k2.weights, f"{prefix}.k2.bias": self.k2.bias,
        }
        out.update(self.fuse.tensors(f"{prefix}.fuse"))
        out.update(self.gate.tensors(f"{prefix}.gate"))
        return out

    def __call__(self, features, vmap: SparseVoxelMap, image_map: SparseImageMap,
                 trace: dict | None = None) -> np.ndarray:
        return noise_robust_extract(features, vmap, image_map, self, trace)


def noise_robust_extract(features, vmap: SparseVoxelMap, image_map: SparseImageMap,
                         block: NoiseRobustBlock, trace: dict | None = None) -> np.ndarray:
    """Gated fusion of 3-D and 2-D branch features for every point.

    Points with no pixel (not co-visible) get a zero 2-D branch feature.
    If ``trace`` is a dict, intermediates are stored in it by name.
    """
    F = check_features(features, rows=vmap.num_points, stage="nr.input")
    if image_map.point_pixel.shape[0] != F.shape[0]:
        raise InputError("image map and voxel map cover different point counts")

    Fv = scatter(F, vmap, "mean")
    f3d = gather(_finite(submanifold_conv(vmap.index, Fv, block.k3), "nr.conv3d"), vmap)

    img = image_map.with_features(F)
    if img.num_pixels:
        conv2d = submanifold_conv(img.sites, img.features, block.k2)
    else:
        conv2d = np.zeros((0, block.k2.out_channels))
    f2d = img.to_points(_finite(conv2d, "nr.conv2d"))

    f2d3d = _finite(block.fuse(np.concatenate([f3d, f2d], axis=1)), "nr.fuse")
    weight = _finite(sigmoid(block.gate(f2d3d)), "nr.gate")
    out = f2d3d * weight
    if trace is not None:
        trace.update({"nr_voxel": Fv, "nr_3d": f3d, "nr_2d": f2d, "nr_fused": f2d3d,
                      "nr_gate": weight, "nr_out": out})
    return out
