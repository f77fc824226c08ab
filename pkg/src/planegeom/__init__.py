"""Geometry toolkit for piecewise planar 3D reconstruction.

Plane recovery from depth, anchor-normal encoding, the two-view warping
loss, ground-truth construction with occlusion completion, and the
evaluation metrics used for planar reconstruction benchmarks.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BehindCameraError,
    DegenerateEncodingError,
    DegenerateGeometryError,
    DomainError,
    EmptyOverlapError,
    EmptySupportError,
    FormatError,
    InsufficientDataError,
    PlaneGeomError,
    ShapeError,
)
from .geometry import (  # noqa: E402
    CameraIntrinsics,
    CoordinateMap,
    DepthMap,
    Pose,
    bilinear_sample,
    depthmap_to_coords,
    project,
    transform,
    unproject,
)
from .planes import (  # noqa: E402
    InstanceMask,
    Plane,
    fit_plane_svd,
    offset_from_depth,
    param_difference,
    plane_depth,
    render_plane_depth,
)

__all__ = [
    "__version__",
    "BehindCameraError",
    "DegenerateEncodingError",
    "DegenerateGeometryError",
    "DomainError",
    "EmptyOverlapError",
    "EmptySupportError",
    "FormatError",
    "InsufficientDataError",
    "PlaneGeomError",
    "ShapeError",
    "CameraIntrinsics",
    "CoordinateMap",
    "DepthMap",
    "Pose",
    "bilinear_sample",
    "depthmap_to_coords",
    "project",
    "transform",
    "unproject",
    "InstanceMask",
    "Plane",
    "fit_plane_svd",
    "offset_from_depth",
    "param_difference",
    "plane_depth",
    "render_plane_depth",
]
