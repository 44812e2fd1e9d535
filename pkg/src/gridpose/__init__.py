"""Grid-cell keypoint prediction, confidence fusion, and RANSAC-EPnP pose estimation.

A library, simulator, and CLI for multi-object 6D pose estimation from local
grid-cell predictions: loss functions with verified gradients, four candidate
fusion strategies, a robust EPnP solver with Gauss-Newton refinement, the
standard pose-accuracy metrics, and a seeded synthetic-scene generator that
makes the whole pipeline verifiable end to end without a trained network.
"""

__version__ = "0.1.0"

from .errors import (
    AllZeroError,
    BehindCameraError,
    CheiralityFailureError,
    ConfigError,
    DataError,
    DegenerateError,
    EmptyClusterError,
    EmptyModelError,
    GridPoseError,
    NoConsensusError,
    NonFiniteError,
    NumericalError,
    OutOfRangeError,
    SamplingExhaustedError,
    SchemaViolationError,
    SpecMismatchError,
    TooFewError,
)
from .geometry import (
    CameraIntrinsics,
    ObjectModel,
    Pose,
    add_metric,
    adds_metric,
    model_from_mesh,
    model_from_points,
    project,
    project_points,
    rep_metric,
    rotation_geodesic,
)
from .grid import (
    GridSpec,
    GroundTruthGrid,
    KeypointPrediction,
    PredictionGrid,
    cell_center,
    decode_prediction,
    encode_offset,
    rasterize_ground_truth,
    residual,
)
from .losses import (
    LossConfig,
    LossReport,
    focal_loss,
    grad_check,
    loss_conf,
    loss_pos,
    loss_total,
    median_frequency_weights,
)
from .fusion import (
    Cluster,
    CorrespondenceSet,
    cluster_cells,
    select_best_n,
    select_highest_confidence,
    select_no_fusion,
    select_oracle,
)
from .pnp import PnpSolution, RansacParams, epnp, ransac_pnp, refine_pose
from .simulator import (
    NoiseModel,
    Scene,
    SceneConfig,
    default_model_library,
    sample_scene,
    synthesize_predictions,
)
from .evaluation import (
    AccuracyTable,
    EvalRecord,
    aggregate,
    evaluate_instance,
    match_detections,
)
from .pipeline import PipelineConfig, PipelineResult, RunManifest, run_pipeline
