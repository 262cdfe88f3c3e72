"""Camera-to-voxel feature lifting for semantic scene completion.

Pinhole geometry, voxel grids, Gaussian-decay depth-prior projection of
image features into a 3D volume, frame-to-frame grid warping, SSC metrics
and SemanticKITTI-format I/O, plus a synthetic world generator for tests.
"""

import os

import numba

# The TBB layer warns on older TBB builds; OpenMP or the builtin queue are fine here.
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .depth_prior import DepthMap, FitConfig, RelativeDepthMap, ScaleFit, apply_scale, fit_scale, render_sparse_depth
from .errors import (
    ChannelMismatch,
    DegenerateFit,
    DimensionMismatch,
    EmptyEvaluation,
    FormatError,
    InsufficientSamples,
    InvalidPose,
    NonPositiveDepth,
    ParseError,
    PointBehindCamera,
    SizeMismatch,
    SpecMismatch,
    TruncatedFile,
    UnknownRawLabel,
    ValidationError,
    VoxfuseError,
)
from .gdp import FeatureImage, GdpConfig, GdpResult, gaussian_weight, gdp_gather, gdp_scatter, traverse_ray
from .geometry import (
    CameraIntrinsics,
    RigidPose,
    back_project,
    project,
    ray_through_pixel,
    relative_in_frame,
    relative_transform,
)
from .metrics import (
    EvalReport,
    LossReport,
    consistency,
    consistency_loss,
    consistency_report,
    cross_entropy_loss,
    miou,
    sc_iou,
)
from .temporal import (
    InitPolicy,
    SequenceState,
    init_hidden,
    step_state,
    trilinear_sample,
    warp_feature_grid,
    warp_label_grid,
    warp_prob_grid,
)
from .voxel import (
    CLASS_IDS,
    CLASS_NAMES,
    EMPTY,
    NUM_CLASSES,
    UNKNOWN,
    FeatureGrid,
    GridSpec,
    LabelGrid,
    MaskGrid,
    ProbGrid,
    fov_mask,
    overlap_mask,
    points_to_indices,
    world_to_index,
)

__version__ = "0.1.0"
