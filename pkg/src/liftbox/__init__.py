"""liftbox: depth images to gravity-aligned clouds, pseudo 3D boxes,
re-rendered training views, and detection evaluation."""

from .annotate import (
    NOISE,
    Box2D,
    Box3D,
    DropRecord,
    SizeFilterDecision,
    dbscan,
    fit_box,
    frustum_points,
    generate_annotations,
    select_object_cluster,
    size_filter,
)
from .errors import (
    DegenerateGeometryError,
    DegenerateRotationError,
    EmptyClusterError,
    FormatError,
    InvalidArgumentError,
    LiftboxError,
    NoDataError,
    UnknownCategoryError,
)
from .evaluate import (
    DetectionSet,
    GroundTruthSet,
    KdeCurve,
    MeanAPResult,
    RatioReport,
    average_precision,
    iou3d,
    iou3d_axis_aligned,
    kde,
    mean_ap,
    ratio_report,
)
from .geometry import (
    CameraModel,
    DepthImage,
    PointCloud,
    intrinsics_from_fov,
    lift_depth,
    project_point,
    project_points,
    transform_cloud,
)
from .gravity import (
    NormalConsensus,
    NormalMap,
    cluster_normals,
    correct_orientation,
    estimate_normals,
    rodrigues_alignment,
)
from .priors import SizePriorDB, default_priors_path, load_priors, read_priors, volume_ratio
from .render import (
    Viewpoint,
    VisibilityResult,
    angle_sweep,
    best_compact_view,
    compactness,
    make_training_renders,
    orbit_camera,
    partial_view_removal,
    render_depth,
    visible_set,
)

__version__ = "0.1.0"
