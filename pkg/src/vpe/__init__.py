"""Virtual-point-enhanced point cloud segmentation toolkit.

Filtering of image-derived virtual points, a sparse voxel/pixel encoder,
multi-scale supervision targets and segmentation metrics, all in numpy.
"""

from .core import (CalibrationModel, InputError, NumericError, PointSet, SparseVoxelMap, VoxelConfig,
                   VPEError, build_initial_features)
from .filtering import FilterParams, FilterStats, filter_virtual, merge
from .io import PipelineConfig, load_config
from .metrics import EvalReport, evaluate
from .model import SegmentationNet
from .pipeline import PipelineError, run_pipeline
from .voxel import gather, scatter, voxelize

__version__ = "0.1.0"

__all__ = [
    "CalibrationModel", "EvalReport", "FilterParams", "FilterStats", "InputError", "NumericError",
    "PipelineConfig", "PipelineError", "PointSet", "SegmentationNet", "SparseVoxelMap", "VPEError",
    "VoxelConfig", "build_initial_features", "evaluate", "filter_virtual", "gather", "load_config",
    "merge", "run_pipeline", "scatter", "voxelize",
]
