"""Glass-surface detection for ToF depth cameras fused with an ultrasonic rangefinder.

Transparent panes return almost no ToF signal except for small specular
speckles at near-perpendicular incidence.  This package finds those speckles,
validates them geometrically, fuses a scalar sonar range to reject background
clutter, and reprojects the detected pane back into the depth map as solid
geometry so downstream consumers see glass as an obstacle.
"""

from .core import (
    CameraIntrinsics,
    ContractError,
    DepthFrame,
    DepthRangeError,
    ParameterError,
    ParseError,
    Rect,
    Ray,
    SonarReading,
    SpeckleMapError,
    StructuralError,
    ray_direction,
    validate_frame,
)
from .metrics import CorpusScores, evaluate_corpus, pixel_confusion
from .pipeline import (
    FrameDiagnostics,
    PipelineConfig,
    PipelineState,
    init_state,
    load_config,
    preset,
    process_frame,
)
from .reprojection import FusedDepthFrame
from .synth import CorpusSpec, SceneSpec, generate_corpus, render_scene
from .tracker import ConfirmedSpeckle, SpeckleTracker, TrackerConfig

__all__ = [
    "CameraIntrinsics",
    "ConfirmedSpeckle",
    "ContractError",
    "CorpusScores",
    "CorpusSpec",
    "DepthFrame",
    "DepthRangeError",
    "FrameDiagnostics",
    "FusedDepthFrame",
    "ParameterError",
    "ParseError",
    "PipelineConfig",
    "PipelineState",
    "Ray",
    "Rect",
    "SceneSpec",
    "SonarReading",
    "SpeckleMapError",
    "SpeckleTracker",
    "StructuralError",
    "TrackerConfig",
    "evaluate_corpus",
    "generate_corpus",
    "init_state",
    "load_config",
    "pixel_confusion",
    "preset",
    "process_frame",
    "ray_direction",
    "render_scene",
    "validate_frame",
]

__version__ = "0.1.0"
