"""Point/label containers (KITTI conventions) and pipeline configuration."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import NUSCENES_CROP, REAL, InputError, PointSet, VoxelConfig
from .filtering import FilterParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_POINT_DTYPE = np.dtype("<f4")


def read_points_bin(path, origin: int = REAL) -> PointSet:
    """Read little-endian float32 ``(x, y, z, intensity)`` records."""
    data = Path(path).read_bytes()
    if len(data) % 16:
        raise InputError(f"{path}: size {len(data)} bytes is not a multiple of 16")
    arr = np.frombuffer(data, dtype=_POINT_DTYPE).reshape(-1, 4).astype(np.float64)
    return PointSet(arr[:, :3], arr[:, 3], origin=np.full(arr.shape[0], origin, np.uint8))


def write_points_bin(path, points: PointSet) -> None:
    arr = np.column_stack([points.coords, points.intensity]).astype(_POINT_DTYPE)
    Path(path).write_bytes(arr.tobytes())


def read_labels(path) -> np.ndarray:
    """SemanticKITTI ``.label``: semantic id is the low 16 bits of each u32 word."""
    data = Path(path).read_bytes()
    if len(data) % 4:
        raise InputError(f"{path}: size {len(data)} bytes is not a multiple of 4")
    words = np.frombuffer(data, dtype="<u4")
    return (words & 0xFFFF).astype(np.int64)


def write_labels(path, labels, instance=None) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise InputError("semantic ids must fit in 16 bits")
    words = labels.astype(np.uint32)
    if instance is not None:
        words |= np.asarray(instance, dtype=np.uint32) << 16
    Path(path).write_bytes(words.astype("<u4").tobytes())


@dataclass
class PipelineConfig:
    """Run configuration. Defaults follow the nuScenes setup; the synthetic
    reference config shrinks ``hidden`` and ``strides``."""

    voxel_size: float = 0.1
    strides: list = field(default_factory=lambda: [2, 4, 8, 16, 16, 16])
    hidden: int = 256
    num_classes: int = 4
    ignore_id: Optional[int] = None
    scene_min: tuple = NUSCENES_CROP[0]
    scene_max: tuple = NUSCENES_CROP[1]
    seed: int = 0
    filter_enabled: bool = True
    filter: FilterParams = field(default_factory=FilterParams)
    ffe_stride: int = 2
    gamma: float = 1.0
    lam: float = 1.0
    bins: list = field(default_factory=lambda: [0.0, 20.0, 50.0, float("inf")])
    miou_mode: str = "present"

    def __post_init__(self):
        if self.ignore_id is None:
            self.ignore_id = self.num_classes
        self.strides = [int(s) for s in self.strides]
        if not self.strides or any(s < 1 for s in self.strides):
            raise InputError("strides must be a non-empty list of positive integers")
        if self.hidden < 1:
            raise InputError("hidden width must be positive")
        VoxelConfig(self.voxel_size, self.scene_min, self.scene_max)

    @property
    def voxel_config(self) -> VoxelConfig:
        return VoxelConfig(self.voxel_size, self.scene_min, self.scene_max)

    def stage_scales(self) -> list[float]:
        return [self.voxel_size * s for s in self.strides]

    def override(self, **kw) -> "PipelineConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        fkw = {k[len("filter_"):]: kw.pop(k) for k in list(kw)
               if k.startswith("filter_") and k != "filter_enabled"}
        cfg = replace(self, **kw)
        if fkw:
            cfg = replace(cfg, filter=replace(cfg.filter, **fkw))
        return cfg


def _float_list(v) -> list[float]:
    return [float("inf") if (isinstance(v_, str) and v_.lower() == "inf") else float(v_) for v_ in v]


def load_config(path) -> PipelineConfig:
    """Parse a TOML config. Top-level keys mirror :class:`PipelineConfig`;
    ``[filter]`` holds ``a, b, s, D, radius, enabled``; ``[loss]`` holds
    ``gamma, lambda``; ``[eval]`` holds ``bins, mode``."""
    try:
        raw = tomllib.loads(Path(path).read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    kw = {}
    for key in ("voxel_size", "strides", "hidden", "num_classes", "ignore_id", "seed", "ffe_stride"):
        if key in raw:
            kw[key] = raw[key]
    if "scene_min" in raw:
        kw["scene_min"] = tuple(_float_list(raw["scene_min"]))
    if "scene_max" in raw:
        kw["scene_max"] = tuple(_float_list(raw["scene_max"]))
    f = raw.get("filter", {})
    kw["filter"] = FilterParams(
        a=float(f.get("a", 5.0)), b=float(f.get("b", 20.0)), s=float(f.get("s", 0.4)),
        D=float(f.get("D", 10.0)), prefilter_radius=float(f.get("radius", 2.0)),
    )
    kw["filter_enabled"] = bool(f.get("enabled", True))
    loss = raw.get("loss", {})
    kw["gamma"] = float(loss.get("gamma", 1.0))
    kw["lam"] = float(loss.get("lambda", 1.0))
    ev = raw.get("eval", {})
    if "bins" in ev:
        kw["bins"] = _float_list(ev["bins"])
    if "mode" in ev:
        kw["miou_mode"] = str(ev["mode"])
    unknown = set(raw) - {"voxel_size", "strides", "hidden", "num_classes", "ignore_id", "seed",
                          "ffe_stride", "scene_min", "scene_max", "filter", "loss", "eval"}
    if unknown:
        raise InputError(f"{path}: unknown config keys {sorted(unknown)}")
    return PipelineConfig(**kw)


def default_config_path() -> Path:
    return Path(__file__).with_name("data") / "synthetic.toml"
