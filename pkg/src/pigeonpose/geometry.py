"""Pinhole cameras, projection and multi-view DLT triangulation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import (
    CalibrationError,
    DegenerateGeometry,
    InsufficientViews,
    PointBehindCamera,
)
from .skeleton import Pose2D, Pose3D, check_schema

DEFAULT_CONFIDENCE_THRESHOLD = 0.5
MIN_DEPTH = 1e-9
DEGENERACY_TOL = 1e-12
ROTATION_TOL = 1e-9
LOAD_ROTATION_TOL = 1e-6


class Point2D(NamedTuple):
    u: float
    v: float
    confidence: float = 1.0


@dataclass(frozen=True, eq=False)
class CameraCalibration:
    """Intrinsics, world-to-camera extrinsics and image size of one view.

    A world point ``X`` maps to camera coordinates ``R @ X + t``; the camera
    looks down its +z axis. Units: pixels for the intrinsics, meters for ``t``.
    """

    camera_id: str
    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        K = np.array(self.intrinsics, dtype=np.float64)
        R = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(-1)
        if K.shape != (3, 3) or R.shape != (3, 3) or t.shape != (3,):
            raise CalibrationError(f"{self.camera_id}: bad matrix shapes")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise CalibrationError(f"{self.camera_id}: non-finite calibration values")
        if K[1, 0] != 0 or K[2, 0] != 0 or K[2, 1] != 0 or K[2, 2] != 1:
            raise CalibrationError(f"{self.camera_id}: intrinsics must be upper-triangular with K[2,2] = 1")
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise CalibrationError(f"{self.camera_id}: focal lengths must be positive")
        if np.max(np.abs(R.T @ R - np.eye(3))) >= ROTATION_TOL or abs(np.linalg.det(R) - 1) > ROTATION_TOL:
            raise CalibrationError(f"{self.camera_id}: rotation is not orthonormal with det 1")
        if int(self.image_width) <= 0 or int(self.image_height) <= 0:
            raise CalibrationError(f"{self.camera_id}: image size must be positive")
        for arr in (K, R, t):
            arr.flags.writeable = False
        object.__setattr__(self, "camera_id", str(self.camera_id))
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "image_width", int(self.image_width))
        object.__setattr__(self, "image_height", int(self.image_height))

    @classmethod
    def from_params(cls, camera_id, fx, fy, cx, cy, rotation, translation, width, height):
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        return cls(camera_id, K, rotation, translation, width, height)

    @cached_property
    def projection_matrix(self) -> np.ndarray:
        return self.intrinsics @ np.column_stack([self.rotation, self.translation])

    @cached_property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @cached_property
    def normalizer(self) -> np.ndarray:
        """Isotropic image normalisation: centre to the origin, half-diagonal to sqrt(2)."""
        half_diag = 0.5 * np.hypot(self.image_width, self.image_height)
        s = np.sqrt(2.0) / half_diag
        return np.array(
            [[s, 0.0, -s * 0.5 * self.image_width], [0.0, s, -s * 0.5 * self.image_height], [0.0, 0.0, 1.0]]
        )

    @cached_property
    def normalized_projection(self) -> np.ndarray:
        P = self.normalizer @ self.projection_matrix
        return P / np.linalg.norm(P)

    def to_dict(self) -> dict:
        K = self.intrinsics
        return {
            "format_version": 1,
            "camera_id": self.camera_id,
            "fx": float(K[0, 0]),
            "fy": float(K[1, 1]),
            "cx": float(K[0, 2]),
            "cy": float(K[1, 2]),
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
            "width": self.image_width,
            "height": self.image_height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CameraCalibration:
        try:
            cam_id = str(d["camera_id"])
            R = np.asarray(d["rotation"], dtype=np.float64)
            t = np.asarray(d["translation"], dtype=np.float64)
            fx, fy, cx, cy = (float(d[k]) for k in ("fx", "fy", "cx", "cy"))
            width, height = int(d["width"]), int(d["height"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CalibrationError(f"malformed camera entry: {exc}") from exc
        version = d.get("format_version", 1)
        if version != 1:
            raise CalibrationError(f"{cam_id}: unsupported format_version {version}")
        dist = d.get("distortion")
        if dist is not None and np.any(np.asarray(dist, dtype=np.float64) != 0):
            raise CalibrationError(f"{cam_id}: lens distortion is not supported; undistort the detections first")
        if R.size != 9 or t.size != 3:
            raise CalibrationError(f"{cam_id}: rotation needs 9 numbers and translation 3")
        R = R.reshape(3, 3)
        if np.max(np.abs(R.T @ R - np.eye(3))) >= LOAD_ROTATION_TOL or abs(np.linalg.det(R) - 1) > LOAD_ROTATION_TOL:
            raise CalibrationError(f"{cam_id}: rotation not orthonormal within {LOAD_ROTATION_TOL}")
        U, _, Vt = np.linalg.svd(R)
        R = U @ Vt
        return cls.from_params(cam_id, fx, fy, cx, cy, R, t, width, height)


def load_calibration(path) -> list[CameraCalibration]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CalibrationError(f"cannot read calibration {path}: {exc}") from exc
    if isinstance(data, dict):
        data = data.get("cameras")
    if not isinstance(data, list) or not data:
        raise CalibrationError(f"{path}: expected a non-empty JSON array of cameras")
    calibs = [CameraCalibration.from_dict(d) for d in data]
    ids = [c.camera_id for c in calibs]
    if len(set(ids)) != len(ids):
        raise CalibrationError(f"{path}: duplicate camera_id")
    return calibs


def save_calibration(path, calibs: Sequence[CameraCalibration]) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in calibs], indent=2) + "\n")


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def camera_depth(calib: CameraCalibration, points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    return p @ calib.rotation[2] + calib.translation[2]


def project(calib: CameraCalibration, p) -> np.ndarray:
    """Project world point(s) ``(3,)`` or ``(N, 3)`` to pixels ``(2,)`` or ``(N, 2)``.

    Raises :class:`PointBehindCamera` if any point has camera depth <= 1e-9.
    """
    p = np.asarray(p, dtype=np.float64)
    cam = p @ calib.rotation.T + calib.translation
    z = cam[..., 2]
    if np.any(~(z > MIN_DEPTH)):
        raise PointBehindCamera(f"point behind camera {calib.camera_id}")
    img = cam @ calib.intrinsics.T
    return img[..., :2] / img[..., 2:3]


def reprojection_error(calib: CameraCalibration, p, obs) -> float:
    """Pixel distance between the projection of ``p`` and observation ``obs``."""
    uv = project(calib, np.asarray(p, dtype=np.float64).reshape(3))
    return float(np.hypot(uv[0] - obs[0], uv[1] - obs[1]))


# ---------------------------------------------------------------------------
# triangulation
# ---------------------------------------------------------------------------

@dataclass
class _Stack:
    proj: np.ndarray  # (V, 3, 4) pixel projections
    proj_n: np.ndarray  # (V, 3, 4) normalised projections
    norm: np.ndarray  # (V, 3, 3)


def _stack(calibs: Sequence[CameraCalibration]) -> _Stack:
    return _Stack(
        np.stack([c.projection_matrix for c in calibs]),
        np.stack([c.normalized_projection for c in calibs]),
        np.stack([c.normalizer for c in calibs]),
    )


def triangulate_batch(calibs: Sequence[CameraCalibration], uv, use, backend=None):
    """Triangulate ``M`` points, each from a subset of the ``V`` views.

    Parameters
    ----------
    calibs : sequence of V cameras
    uv : ndarray, shape (M, V, 2)
        Observations in pixels; entries where ``use`` is False are ignored.
    use : ndarray of bool, shape (M, V)

    Returns
    -------
    xyz : ndarray, shape (M, 3)
        NaN where fewer than two views were used or the geometry is degenerate.
    rmse : ndarray, shape (M,)
        Reprojection RMSE over the used views (NaN for invalid rows, inf if
        the solution lies behind a used camera).
    degenerate : ndarray of bool, shape (M,)
    """
    st = _stack(calibs)
    uv = np.asarray(uv, dtype=np.float64)
    use = np.asarray(use, dtype=bool)
    m_rows, n_views = use.shape
    uv_safe = np.where(use[..., None], uv, 0.0)
    uv_n = np.einsum("vij,mvj->mvi", st.norm[:, :2, :2], uv_safe) + st.norm[None, :, :2, 2]
    vecs, svals = kernels.dlt_batch(st.proj_n, uv_n, use, backend=backend)
    enough = use.sum(axis=1) >= 2
    with np.errstate(invalid="ignore", divide="ignore"):
        gap = (svals[:, 2] - svals[:, 3]) / svals[:, 0]
        w = vecs[:, 3]
        degenerate = enough & ~((gap >= DEGENERACY_TOL) & (np.abs(w) > DEGENERACY_TOL))
        xyz = vecs[:, :3] / w[:, None]
    xyz[~enough | degenerate] = np.nan
    rmse = reprojection_rmse(st.proj, xyz, uv_safe, use)
    return xyz, rmse, degenerate


def reprojection_rmse(proj, xyz, uv, use) -> np.ndarray:
    """Reprojection RMSE per row; ``proj`` is ``(V, 3, 4)``; inf if any used view sees the point behind it."""
    xh = np.concatenate([xyz, np.ones((xyz.shape[0], 1))], axis=1)
    img = np.einsum("vij,mj->mvi", proj, xh)
    depth = img[..., 2]
    with np.errstate(invalid="ignore", divide="ignore"):
        d2 = np.sum((img[..., :2] / depth[..., None] - uv) ** 2, axis=-1)
    d2 = np.where(depth > MIN_DEPTH, d2, np.inf)
    d2 = np.where(use, d2, 0.0)
    n = use.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sqrt(d2.sum(axis=1) / n)
    out[~np.all(np.isfinite(xyz), axis=1)] = np.nan
    return out


def _as_observation(obs) -> tuple[float, float, float]:
    vals = tuple(float(x) for x in obs)
    if len(vals) == 2:
        return vals[0], vals[1], 1.0
    if len(vals) == 3:
        return vals
    raise ValueError(f"observation must be (u, v) or (u, v, confidence), got {obs!r}")


def triangulate_point(observations, confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD):
    """DLT-triangulate one point from ``[(calibration, (u, v[, confidence])), ...]``.

    Returns ``(xyz, reprojection_rmse)``.
    """
    calibs, uv, use = [], [], []
    for calib, obs in observations:
        u, v, c = _as_observation(obs)
        calibs.append(calib)
        uv.append((u, v))
        use.append(c >= confidence_threshold and np.isfinite(u) and np.isfinite(v))
    if sum(use) < 2:
        raise InsufficientViews(f"{sum(use)} usable observation(s); at least 2 required")
    xyz, rmse, degenerate = triangulate_batch(calibs, np.array([uv]), np.array([use]))
    if degenerate[0]:
        raise DegenerateGeometry("viewing rays are (nearly) parallel")
    return xyz[0], float(rmse[0])


def triangulate_pose(views, confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD):
    """Triangulate every keypoint of one individual independently.

    ``views`` is a sequence of ``(CameraCalibration, Pose2D)``. A keypoint is
    used in a view when its confidence is >= ``confidence_threshold``.
    Keypoints seen in fewer than two views (or with degenerate geometry) come
    back invalid. Returns ``(Pose3D, per_keypoint_rmse)`` with NaN RMSE for
    invalid keypoints.
    """
    views = list(views)
    if not views:
        raise InsufficientViews("no views given")
    poses: list[Pose2D] = [p for _, p in views]
    n_kp = check_schema(poses)
    calibs = [c for c, _ in views]
    uv = np.stack([p.uv for p in poses], axis=1)  # (K, V, 2)
    use = np.stack([p.confidence >= confidence_threshold for p in poses], axis=1)
    use &= np.all(np.isfinite(uv), axis=-1)
    xyz, rmse, _ = triangulate_batch(calibs, uv, use)
    assert xyz.shape == (n_kp, 3)
    return Pose3D(xyz), rmse
