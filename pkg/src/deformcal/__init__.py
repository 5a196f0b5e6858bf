"""Camera calibration with deformable planar targets.

Joint estimation of pinhole intrinsics with radial distortion, per-image
target poses, and target deformation: a static corner-offset field, a
per-image paraboloid bend, or both. Includes synthetic scenario generation,
evaluation metrics, versioned file formats, and a command-line front end.
"""

from .dataset import Dataset, Frame
from .exceptions import (
    BehindCameraError,
    CalibrationError,
    CheiralityError,
    DataError,
    DegenerateConfigurationError,
    IllConditionedError,
    InsufficientDataError,
    ScenarioError,
    UndistortDivergenceError,
)
from .geometry import (
    Intrinsics,
    Pose,
    project,
    rotation_matrix,
    rotation_vector_from_matrix,
    undistort_normalized,
    unproject_at_depth,
)
from .initialization import (
    Homography,
    estimate_homography,
    intrinsics_from_homographies,
    pose_from_homography,
)
from .metrics import (
    MappingError,
    MappingErrorConfig,
    mapping_error,
    symmetric_mapping_error,
    test_error,
    training_rmse,
)
from .solver import (
    CalibrationProblem,
    CalibrationResult,
    ConvergenceStatus,
    MultiCameraResult,
    SolverConfig,
    calibrate,
    calibrate_multicamera,
    reduced_calibrate,
    solve_lm,
)
from .synth import (
    DeformationRegime,
    GroundTruth,
    ScenarioConfig,
    generate_rig_scenario,
    generate_scenario,
    perfect_observations,
    sample_subsets,
)
from .target import (
    DeformationModel,
    ParaboloidCoeffs,
    StaticCorrection,
    TargetSpec,
    board_points,
    corner_position,
    default_anchors,
    gauge_mask,
    paraboloid_heights,
)

__version__ = "0.1.0"

__all__ = [
    "BehindCameraError",
    "CalibrationError",
    "CalibrationProblem",
    "CalibrationResult",
    "CheiralityError",
    "ConvergenceStatus",
    "DataError",
    "Dataset",
    "DeformationModel",
    "DeformationRegime",
    "DegenerateConfigurationError",
    "Frame",
    "GroundTruth",
    "Homography",
    "IllConditionedError",
    "InsufficientDataError",
    "Intrinsics",
    "MappingError",
    "MappingErrorConfig",
    "MultiCameraResult",
    "ParaboloidCoeffs",
    "Pose",
    "ScenarioConfig",
    "ScenarioError",
    "SolverConfig",
    "StaticCorrection",
    "TargetSpec",
    "UndistortDivergenceError",
    "board_points",
    "calibrate",
    "calibrate_multicamera",
    "corner_position",
    "default_anchors",
    "estimate_homography",
    "gauge_mask",
    "generate_rig_scenario",
    "generate_scenario",
    "intrinsics_from_homographies",
    "mapping_error",
    "paraboloid_heights",
    "perfect_observations",
    "pose_from_homography",
    "project",
    "reduced_calibrate",
    "rotation_matrix",
    "rotation_vector_from_matrix",
    "sample_subsets",
    "solve_lm",
    "symmetric_mapping_error",
    "test_error",
    "training_rmse",
    "undistort_normalized",
    "unproject_at_depth",
]
