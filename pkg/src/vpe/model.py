"""A stack of encoder stages (noise-robust extraction followed by
fine-grained enhancement) with a per-point linear classifier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import InputError, PointSet, build_initial_features
from .encoder import NoiseRobustBlock
from .ffe import FineGrainedBlock
from .io import PipelineConfig
from .layers import MlpSpec, load_weights, save_weights
from .projection import Calibs, build_sparse_image_map, empty_image_map
from .voxel import voxelize

INITIAL_CHANNELS = 10


@dataclass
class EncoderStage:
    scale: float
    embed: MlpSpec
    nr: NoiseRobustBlock
    ffe: FineGrainedBlock

    def tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = self.embed.tensors(f"{prefix}.embed")
        out.update(self.nr.tensors(f"{prefix}.nr"))
        out.update(self.ffe.tensors(f"{prefix}.ffe"))
        return out


class SegmentationNet:
    def __init__(self, stages: list[EncoderStage], classifier: MlpSpec):
        self.stages = stages
        self.classifier = classifier

    @classmethod
    def random(cls, cfg: PipelineConfig, seed: Optional[int] = None) -> "SegmentationNet":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        C = cfg.hidden
        stages = []
        for i, scale in enumerate(cfg.stage_scales()):
            fan_in = INITIAL_CHANNELS if i == 0 else C
            stages.append(EncoderStage(
                scale=scale,
                embed=MlpSpec.random([fan_in, C], rng, ["relu"]),
                nr=NoiseRobustBlock.random(C, rng),
                ffe=FineGrainedBlock.random(C, rng, cfg.ffe_stride),
            ))
        classifier = MlpSpec.random([C, cfg.num_classes], rng, ["none"])
        return cls(stages, classifier)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for i, st in enumerate(self.stages):
            out.update(st.tensors(f"stage{i}"))
        out.update(self.classifier.tensors("classifier"))
        return out

    def save(self, path) -> None:
        save_weights(path, self.tensors())

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], cfg: PipelineConfig) -> "SegmentationNet":
        """Load weights into the architecture ``cfg`` describes; names and shapes must match exactly."""
        net = cls.random(cfg, seed=0)
        expected = net.tensors()
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        if missing or extra:
            raise InputError(f"weight file does not match architecture: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, ref in expected.items():
            if tuple(tensors[name].shape) != tuple(ref.shape):
                raise InputError(f"tensor {name}: shape {tuple(tensors[name].shape)}, expected {tuple(ref.shape)}")
            if not np.all(np.isfinite(tensors[name])):
                raise InputError(f"tensor {name} contains non-finite values")
            # every tensor in expected is a live view into net's parameters
            np.copyto(ref, tensors[name])
        return net

    @classmethod
    def load(cls, path, cfg: PipelineConfig) -> "SegmentationNet":
        return cls.from_tensors(load_weights(path), cfg)

    def encode(self, points: PointSet, calib: Optional[Calibs], cfg: PipelineConfig,
               trace: Optional[dict] = None) -> np.ndarray:
        """Per-point features after the last encoder stage."""
        X = build_initial_features(points, cfg.voxel_config)
        if trace is not None:
            trace["initial_features"] = X
        image = (build_sparse_image_map(points, calib, X) if calib is not None
                 else empty_image_map(len(points)))
        for i, st in enumerate(self.stages):
            vmap = voxelize(points, st.scale)
            X = st.embed(X)
            sub = {} if trace is not None else None
            X = st.nr(X, vmap, image, sub)
            X = st.ffe(X, vmap, sub)
            if trace is not None:
                trace.update({f"stage{i}.{k}": v for k, v in sub.items()})
        return X

    def __call__(self, points: PointSet, calib: Optional[Calibs], cfg: PipelineConfig,
                 trace: Optional[dict] = None) -> np.ndarray:
        return self.classifier(self.encode(points, calib, cfg, trace))
