"""Desk-scale monocular food-portion estimation on synthetic scenes.

Pipeline: synthetic scene generation with analytic ground truth, depth
lifting / mesh sampling to point clouds, dual 2D + 3D feature encoders on
a from-scratch reverse-mode tensor engine, and L1-trained linear
regression of portion volume (ml) and energy (kCal), with an ablation
harness over point-cloud variants and input modalities.
"""

from .autodiff import (
    AdamState,
    ParameterSet,
    Tape,
    Tensor,
    adam_step,
    backward,
    l1_loss,
    seeded_init,
    sgd_step,
)
from .dataset import (
    DEFAULT_CLASSES,
    DatasetManifest,
    FoodClass,
    GeneratorConfig,
    SampleRecord,
    build_dataset,
    load_manifest,
    save_manifest,
)
from .encoders import (
    ImageEncoderConfig,
    PointEncoderConfig,
    concat_features,
    encode_image,
    encode_points,
    knn_indices,
)
from .errors import (
    ConfigError,
    DimensionMismatchError,
    FormatError,
    GeometryError,
    NumericalError,
    OrientationError,
    PortionError,
    RenderError,
    WatertightError,
)
from .evaluation import (
    BaselinePredictor,
    MetricsReport,
    ReportRow,
    evaluate,
    evaluate_baseline,
    fit_baseline,
    mae,
    mape,
    run_ablation,
)
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    Frame,
    Image,
    Mask,
    NormalizeMode,
    PointCloud,
    TriangleMesh,
    apply_mask,
    backproject_pinhole,
    lift_depth,
    mesh_volume,
    normalize_unit_cube,
    sample_mesh_surface,
    subsample,
)
from .render import RigidTransform, look_at_pose, perturb_depth, render
from .shapes import ShapeKind, ShapeSpec, analytic_volume, generate_mesh
from .training import (
    Checkpoint,
    RegressionHead,
    TrainConfig,
    forward_pipeline,
    load_checkpoint,
    predict_portion,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
