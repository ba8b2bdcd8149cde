"""First-frame cross-view identity matching.

Detections from all cameras are grouped into individuals ("clusters") by
greedy view-by-view Hungarian assignment on triangulation error:

1. the view with the most detections seeds one global ID per detection
   (ties: smallest camera_id);
2. every other view, in descending detection count, is matched against the
   current clusters. Pairing candidate ``i`` with cluster ``j`` costs the
   mean, over keypoints seen in at least two views, of the reprojection RMSE
   obtained by triangulating the cluster's observations plus the candidate;
3. pairs costing more than ``gate`` pixels are rejected and the candidate
   starts a new global ID.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NoCalibration, SingleView
from .geometry import DEFAULT_CONFIDENCE_THRESHOLD, CameraCalibration, triangulate_batch
from .skeleton import Pose2D, check_schema

DEFAULT_GATE = 25.0
_BIG = 1e12


@dataclass(frozen=True)
class ViewDetections:
    camera_id: str
    poses: Sequence[Pose2D]


@dataclass
class GlobalAssignment:
    mapping: dict[tuple[str, int], int] = field(default_factory=dict)
    total_cost: float = 0.0
    n_ids: int = 0

    def global_id(self, camera_id: str, index: int) -> int | None:
        return self.mapping.get((camera_id, index))

    def members(self, global_id: int) -> dict[str, int]:
        return {cam: idx for (cam, idx), gid in self.mapping.items() if gid == global_id}

    def count(self, camera_id: str) -> int:
        return sum(1 for cam, _ in self.mapping if cam == camera_id)

    def check(self) -> None:
        """Assert the per-view injectivity and density invariants."""
        seen = set()
        for (cam, _), gid in self.mapping.items():
            assert (cam, gid) not in seen, f"global id {gid} used twice in {cam}"
            seen.add((cam, gid))
        assert set(self.mapping.values()) == set(range(self.n_ids))


def _calib_lookup(calibs) -> dict[str, CameraCalibration]:
    if isinstance(calibs, Mapping):
        return dict(calibs)
    return {c.camera_id: c for c in calibs}


def match_identities(views: Sequence[ViewDetections], calibs, gate: float = DEFAULT_GATE,
                     confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD) -> GlobalAssignment:
    if len(views) < 2:
        raise SingleView(f"matching needs at least 2 views, got {len(views)}")
    lookup = _calib_lookup(calibs)
    for v in views:
        if v.camera_id not in lookup:
            raise NoCalibration(f"no calibration for camera {v.camera_id!r}")
    n_kp = check_schema([p for v in views for p in v.poses])

    order = sorted(views, key=lambda v: (-len(v.poses), v.camera_id))
    cams = [lookup[v.camera_id] for v in order]
    n_views = len(order)

    result = GlobalAssignment()
    # cluster state: observations per (keypoint, view slot)
    cl_uv = np.zeros((0, n_kp, n_views, 2))
    cl_use = np.zeros((0, n_kp, n_views), dtype=bool)

    def _new_cluster(slot, cam_id, idx, pose):
        nonlocal cl_uv, cl_use
        uv = np.zeros((1, n_kp, n_views, 2))
        use = np.zeros((1, n_kp, n_views), dtype=bool)
        uv[0, :, slot] = np.nan_to_num(pose.uv)
        use[0, :, slot] = pose.valid(confidence_threshold)
        cl_uv = np.concatenate([cl_uv, uv])
        cl_use = np.concatenate([cl_use, use])
        result.mapping[(cam_id, idx)] = result.n_ids
        result.n_ids += 1

    for slot, view in enumerate(order):
        poses = list(view.poses)
        if not poses:
            continue
        if cl_uv.shape[0] == 0:
            for idx, pose in enumerate(poses):
                _new_cluster(slot, view.camera_id, idx, pose)
            continue
        cost = pair_costs(cams, cl_uv, cl_use, slot, poses, confidence_threshold)
        rows, cols = linear_sum_assignment(np.where(np.isfinite(cost), cost, _BIG))
        taken = {}
        for i, j in zip(rows, cols):
            if cost[i, j] <= gate:
                taken[i] = j
        n_clusters = cl_uv.shape[0]
        for idx, pose in enumerate(poses):
            j = taken.get(idx)
            if j is None:
                _new_cluster(slot, view.camera_id, idx, pose)
                continue
            cl_uv[j, :, slot] = np.nan_to_num(pose.uv)
            cl_use[j, :, slot] = pose.valid(confidence_threshold)
            result.mapping[(view.camera_id, idx)] = int(j)
            result.total_cost += float(cost[idx, j])
        assert cl_uv.shape[0] >= n_clusters
    return result


def pair_costs(cams, cl_uv, cl_use, slot, poses, confidence_threshold) -> np.ndarray:
    """Cost matrix ``(len(poses), n_clusters)`` of mean per-keypoint reprojection RMSE.

    All candidate/cluster/keypoint triangulations go through one batched call.
    """
    n_cl, n_kp, n_views = cl_use.shape
    n_cand = len(poses)
    cand_uv = np.stack([np.nan_to_num(p.uv) for p in poses])  # (n, K, 2)
    cand_use = np.stack([p.valid(confidence_threshold) for p in poses])  # (n, K)
    uv = np.broadcast_to(cl_uv, (n_cand,) + cl_uv.shape).copy()
    use = np.broadcast_to(cl_use, (n_cand,) + cl_use.shape).copy()
    uv[:, :, :, slot] = cand_uv[:, None]
    use[:, :, :, slot] = cand_use[:, None]
    _, rmse, _ = triangulate_batch(cams, uv.reshape(-1, n_views, 2), use.reshape(-1, n_views))
    rmse = rmse.reshape(n_cand, n_cl, n_kp)
    counted = (use.sum(axis=-1) >= 2) & cand_use[:, None, :] & ~np.isnan(rmse)
    n = counted.sum(axis=-1)
    total = np.where(counted, rmse, 0.0).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cost = np.where(n > 0, total / n, np.inf)
    return np.where(np.isnan(cost), np.inf, cost)
