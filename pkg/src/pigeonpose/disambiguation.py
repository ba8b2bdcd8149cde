"""Left/right keypoint swap resolution by exhaustive triangulation-error search.

For each symmetric pair independently, every combination of per-view swap
flags is tried; the combination whose two triangulated keypoints reproject
with the smallest summed RMSE wins. Flipping every flag only relabels left
and right globally, so the first view's flag is pinned to False. Among equal
costs the combination with fewer swaps is preferred.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .errors import InsufficientViews, TooManyViews
from .geometry import DEFAULT_CONFIDENCE_THRESHOLD, triangulate_batch
from .skeleton import SYMMETRIC_PAIRS, Pose2D, SymmetricPair, check_schema

MAX_VIEWS = 8


def _flag_table(n_views: int) -> np.ndarray:
    # view 0 is pinned; order by swap count, then lexicographically
    combos = [(False,) + c for c in itertools.product((False, True), repeat=n_views - 1)]
    combos.sort(key=lambda c: (sum(c), c))
    return np.array(combos, dtype=bool).reshape(len(combos), n_views)


def pair_costs(calibs, poses: Sequence[Pose2D], pair: SymmetricPair, flags: np.ndarray,
               confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD) -> np.ndarray:
    """Summed reprojection RMSE of the pair's two keypoints for each flag row.

    A keypoint seen in fewer than two views contributes nothing.
    """
    li, ri = pair
    uv = np.stack([p.uv for p in poses])  # (V, K, 2)
    ok = np.stack([p.valid(confidence_threshold) for p in poses]) & np.all(np.isfinite(uv), axis=-1)
    uv = np.nan_to_num(uv)
    n_combo = flags.shape[0]
    f = flags[:, :, None]
    left_uv = np.where(f, uv[None, :, ri], uv[None, :, li])  # (C, V, 2)
    right_uv = np.where(f, uv[None, :, li], uv[None, :, ri])
    left_ok = np.where(flags, ok[None, :, ri], ok[None, :, li])  # (C, V)
    right_ok = np.where(flags, ok[None, :, li], ok[None, :, ri])
    all_uv = np.concatenate([left_uv, right_uv])
    all_ok = np.concatenate([left_ok, right_ok])
    _, rmse, _ = triangulate_batch(calibs, all_uv, all_ok)
    rmse = np.where(np.isnan(rmse), 0.0, rmse)
    return rmse[:n_combo] + rmse[n_combo:]


def resolve_lr(views, pairs: Sequence[SymmetricPair] = SYMMETRIC_PAIRS,
               confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD):
    """Undo left/right swaps in one individual's per-view poses.

    Parameters
    ----------
    views : sequence of (CameraCalibration, Pose2D)
    pairs : symmetric keypoint pairs to resolve

    Returns
    -------
    corrected : list of Pose2D
    swap_flags : ndarray of bool, shape (V, P)
        True where the pair was swapped back in that view.
    cost : float
        Sum over pairs of the selected combination's cost, in pixels.
    """
    views = list(views)
    n_views = len(views)
    if n_views < 2:
        raise InsufficientViews("left/right resolution needs at least 2 views")
    if n_views > MAX_VIEWS:
        raise TooManyViews(f"{n_views} views exceed the exhaustive-search bound of {MAX_VIEWS}")
    calibs = [c for c, _ in views]
    poses = [p for _, p in views]
    n_kp = check_schema(poses)
    for pair in pairs:
        SymmetricPair(*pair).validate(n_kp)

    ok = np.stack([p.valid(confidence_threshold) for p in poses])
    table = _flag_table(n_views)
    flags = np.zeros((n_views, len(pairs)), dtype=bool)
    total = 0.0
    for k, pair in enumerate(pairs):
        li, ri = pair
        # a view that sees neither keypoint cannot contribute; keep its flag False
        contributes = ok[:, li] | ok[:, ri]
        cand = table[~np.any(table & ~contributes[None, :], axis=1)]
        costs = pair_costs(calibs, poses, SymmetricPair(li, ri), cand, confidence_threshold)
        best = int(np.argmin(costs))  # first minimum = fewest swaps
        flags[:, k] = cand[best]
        total += float(costs[best])

    corrected = []
    for v, pose in enumerate(poses):
        for k, pair in enumerate(pairs):
            if flags[v, k]:
                pose = pose.swapped(SymmetricPair(*pair))
        corrected.append(pose)
    return corrected, flags, total
