"""Depth-aware LiDAR point painting and point-embedding fusion."""

from .errors import (
    CalibrationError,
    ConfigurationError,
    DataError,
    FormatError,
    GenerationError,
    LvicError,
)
from .fusion import FusionParams, embed, fusion_backward, fusion_forward, gelu, init_params, sgd_step
from .geometry import (
    Camera,
    CameraIntrinsics,
    CameraRig,
    SE3Transform,
    back_project,
    in_bounds,
    project,
    transform_point,
)
from .imagery import DepthMap, FeatureMap, sample_depth, sample_feature
from .painter import (
    PaintedCloud,
    PaintLayout,
    PointCloud,
    choose_camera,
    depth_discrepancy,
    paint_cloud,
    paint_point,
)
from .synth import SceneConfig, generate_scene, miscalibration_experiment, perturb_extrinsics

__version__ = "0.1.0"

__all__ = [
    "CalibrationError", "ConfigurationError", "DataError", "FormatError", "GenerationError", "LvicError",
    "FusionParams", "embed", "fusion_backward", "fusion_forward", "gelu", "init_params", "sgd_step",
    "Camera", "CameraIntrinsics", "CameraRig", "SE3Transform", "back_project", "in_bounds", "project",
    "transform_point",
    "DepthMap", "FeatureMap", "sample_depth", "sample_feature",
    "PaintedCloud", "PaintLayout", "PointCloud", "choose_camera", "depth_discrepancy", "paint_cloud", "paint_point",
    "SceneConfig", "generate_scene", "miscalibration_experiment", "perturb_extrinsics",
]
