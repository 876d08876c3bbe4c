"""Interactive multi-object 3D point cloud segmentation with click queries."""

from .encoding import Click, QueryConfig
from .model import InteractiveSegmentationModel, ModelConfig
from .scene import (
    GeneratorSpec,
    PointCloud,
    SceneSample,
    VoxelGrid,
    devoxelize_labels,
    generate_synthetic_scene,
    load_scene,
    save_scene,
    voxelize,
)

__all__ = [
    "Click",
    "QueryConfig",
    "InteractiveSegmentationModel",
    "ModelConfig",
    "GeneratorSpec",
    "PointCloud",
    "SceneSample",
    "VoxelGrid",
    "devoxelize_labels",
    "generate_synthetic_scene",
    "load_scene",
    "save_scene",
    "voxelize",
]

__version__ = "0.1.0"
