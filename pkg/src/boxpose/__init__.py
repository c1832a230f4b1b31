"""Category-level 6-DoF cuboid pose pipeline with a synthetic harness."""

from .errors import (
    BehindCameraError,
    BoxPoseError,
    EmptyDetectionError,
    InsufficientCorrespondencesError,
    NumericalFailureError,
    SceneGenerationError,
    UndefinedViewpointError,
)
from .geometry import (
    CameraIntrinsics,
    Cuboid,
    Keypoints2D,
    Pose,
    RelativeDims,
    bbox2d_from_keypoints,
    cuboid_vertices,
    pose_compose,
    pose_invert,
    project,
)
from .labelgen import (
    OUTPUT_STRIDE,
    EncodedLabels,
    OutputMaps,
    Scene,
    SceneObject,
    encode_scene,
    gaussian_sigma,
    render_heatmap,
    symmetric_label_variants,
)
from .losses import (
    FocalParams,
    LossWeights,
    focal_loss,
    masked_l1,
    symmetric_loss,
    total_loss,
)
from .decode import DecodeConfig, Detection, build_correspondences, decode_objects, extract_peaks
from .pnp import (
    LiftingResult,
    PnPConfig,
    PnPResult,
    resolve_scale,
    solve_keypoint_lifting,
    solve_pnp_lm,
)
from .metrics import (
    EvalRecord,
    OrientedBox,
    average_precision,
    iou3d,
    mean_relative_dim_error,
    pixel_projection_error,
    symmetric_best,
    viewpoint_errors,
)
from .convgru import ConvGRUWeights, HeadStack, convgru_step, run_sequential_heads
from .simharness import (
    BUILTIN_PROFILES,
    CategoryProfile,
    NoiseConfig,
    RunReport,
    noise_preset,
    perturb,
    run_pipeline,
    sample_scenes,
)

__version__ = "0.1.0"
