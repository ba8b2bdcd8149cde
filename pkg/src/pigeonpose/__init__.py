"""Multi-view bird pose triangulation and tracking from silhouette-derived keypoints."""

__version__ = "0.1.0"

from .errors import PoseToolkitError  # noqa: E402
from .geometry import (  # noqa: E402
    CameraCalibration,
    Point2D,
    project,
    reprojection_error,
    triangulate_point,
    triangulate_pose,
)
from .skeleton import KEYPOINT_NAMES, SYMMETRIC_PAIRS, Pose2D, Pose3D  # noqa: E402

__all__ = [
    "CameraCalibration",
    "KEYPOINT_NAMES",
    "Point2D",
    "Pose2D",
    "Pose3D",
    "PoseToolkitError",
    "SYMMETRIC_PAIRS",
    "project",
    "reprojection_error",
    "triangulate_point",
    "triangulate_pose",
]
