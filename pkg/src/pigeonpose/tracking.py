"""SORT tracking per camera view, plus global-ID propagation from frame 0.

State vector of a track: ``[u, v, s, r, du, dv, ds]`` with box centre
``(u, v)``, area ``s`` and aspect ratio ``r = w / h`` (held constant).
The noise constants are those of the reference SORT implementation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .errors import AssignmentMismatch, InvalidConfig, NonFiniteDetection
from .matching import GlobalAssignment
from .silhouette import BoundingBox


@dataclass(frozen=True)
class KalmanConstants:
    """Initial covariance and noise settings, as in reference SORT."""

    measurement_var: tuple = (1.0, 1.0, 10.0, 10.0)
    initial_var: tuple = (10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4)
    process_var: tuple = (1.0, 1.0, 1.0, 1.0, 1e-2, 1e-2, 1e-4)


SORT_CONSTANTS = KalmanConstants()

_F = np.eye(7)
_F[0, 4] = _F[1, 5] = _F[2, 6] = 1.0
_H = np.eye(4, 7)


@dataclass(frozen=True)
class TrackerConfig:
    max_age: int = 1
    min_hits: int = 3
    iou_threshold: float = 0.3
    kalman: KalmanConstants = SORT_CONSTANTS

    def validate(self) -> None:
        if self.max_age < 1 or self.min_hits < 1:
            raise InvalidConfig("max_age and min_hits must be >= 1")
        if not 0.0 < self.iou_threshold < 1.0:
            raise InvalidConfig("iou_threshold must be in (0, 1)")


def bbox_to_z(box) -> np.ndarray:
    x0, y0, x1, y1 = box
    w, h = x1 - x0, y1 - y0
    return np.array([x0 + w / 2.0, y0 + h / 2.0, w * h, w / h])


def x_to_bbox(x) -> np.ndarray:
    w = np.sqrt(x[2] * x[3])
    h = x[2] / w
    return np.array([x[0] - w / 2.0, x[1] - h / 2.0, x[0] + w / 2.0, x[1] + h / 2.0])


@dataclass
class TrackState:
    track_id: int
    kalman_state: np.ndarray
    covariance: np.ndarray
    hits: int = 0
    hit_streak: int = 0
    age: int = 0
    time_since_update: int = 0
    global_id: int | None = None
    last_detection: int | None = None
    kalman: KalmanConstants = field(default=SORT_CONSTANTS, repr=False)

    @classmethod
    def start(cls, track_id: int, box, detection_index: int, kalman: KalmanConstants = SORT_CONSTANTS):
        x = np.zeros(7)
        x[:4] = bbox_to_z(box)
        return cls(track_id, x, np.diag(kalman.initial_var).astype(float),
                   last_detection=detection_index, kalman=kalman)

    def predict(self) -> np.ndarray:
        x = self.kalman_state
        if x[6] + x[2] <= 0:
            x[6] = 0.0
        self.kalman_state = _F @ x
        self.covariance = _F @ self.covariance @ _F.T + np.diag(self.kalman.process_var)
        self.age += 1
        if self.time_since_update > 0:
            self.hit_streak = 0
        self.time_since_update += 1
        self.last_detection = None
        return x_to_bbox(self.kalman_state)

    def update(self, box, detection_index: int) -> None:
        z = bbox_to_z(box)
        P = self.covariance
        R = np.diag(self.kalman.measurement_var)
        S = _H @ P @ _H.T + R
        K = np.linalg.solve(S, _H @ P).T
        self.kalman_state = self.kalman_state + K @ (z - _H @ self.kalman_state)
        I_KH = np.eye(7) - K @ _H
        P = I_KH @ P @ I_KH.T + K @ R @ K.T  # Joseph form
        self.covariance = 0.5 * (P + P.T)
        self.time_since_update = 0
        self.hits += 1
        self.hit_streak += 1
        self.last_detection = detection_index

    def bbox(self) -> np.ndarray:
        return x_to_bbox(self.kalman_state)


class TrackedBox(NamedTuple):
    bbox: BoundingBox
    track_id: int
    detection_index: int


class SortTracker:
    """One camera's tracker. Frames must be fed in temporal order."""

    def __init__(self, config: TrackerConfig | None = None, camera_id: str = ""):
        self.config = config or TrackerConfig()
        self.config.validate()
        self.camera_id = camera_id
        self.tracks: list[TrackState] = []
        self.frame_count = 0
        self._next_id = 0

    def step(self, detections: Sequence) -> list[TrackedBox]:
        """Advance one frame.

        ``detections`` holds ``(BoundingBox, confidence)`` pairs or bare boxes.
        Returns the emitted tracks: those updated this frame that have at
        least ``min_hits`` hits, or any updated track during the first
        ``min_hits`` frames.
        """
        boxes = np.array([_box_of(d) for d in detections], dtype=np.float64).reshape(-1, 4)
        if not np.all(np.isfinite(boxes)):
            raise NonFiniteDetection(f"{self.camera_id}: non-finite detection box")
        cfg = self.config
        self.frame_count += 1

        predicted = np.zeros((len(self.tracks), 4))
        keep = []
        for k, trk in enumerate(self.tracks):
            predicted[k] = trk.predict()
            keep.append(bool(np.all(np.isfinite(predicted[k]))) and trk.kalman_state[2] > 0)
        self.tracks = [t for t, ok in zip(self.tracks, keep) if ok]
        predicted = predicted[np.array(keep, dtype=bool)] if keep else predicted

        matches, unmatched = associate(boxes, predicted, cfg.iou_threshold)
        for d, t in matches:
            self.tracks[t].update(boxes[d], int(d))
        for d in unmatched:
            self.tracks.append(TrackState.start(self._next_id, boxes[d], int(d), cfg.kalman))
            self._next_id += 1

        out = []
        warmup = self.frame_count <= cfg.min_hits
        for trk in self.tracks:
            if trk.time_since_update < 1 and (trk.hits >= cfg.min_hits or warmup):
                out.append(TrackedBox(BoundingBox(*trk.bbox()), trk.track_id, trk.last_detection))
        self.tracks = [t for t in self.tracks if t.time_since_update <= cfg.max_age]
        return out

    def track(self, track_id: int) -> TrackState | None:
        for t in self.tracks:
            if t.track_id == track_id:
                return t
        return None


def _box_of(det):
    if isinstance(det, BoundingBox):
        return tuple(det)
    first = det[0]
    if isinstance(first, BoundingBox):
        return tuple(first)
    return tuple(det[:4])


def associate(dets: np.ndarray, predicted: np.ndarray, iou_threshold: float):
    """Hungarian assignment on IoU. Returns ``(matches, unmatched_detections)``."""
    if len(predicted) == 0 or len(dets) == 0:
        return [], list(range(len(dets)))
    iou = kernels.iou_matrix(dets, predicted)
    rows, cols = linear_sum_assignment(-iou)
    matches = [(int(d), int(t)) for d, t in zip(rows, cols) if iou[d, t] >= iou_threshold]
    matched = {d for d, _ in matches}
    return matches, [d for d in range(len(dets)) if d not in matched]


# ---------------------------------------------------------------------------
# global IDs
# ---------------------------------------------------------------------------

def propagate_global_ids(trackers: dict[str, SortTracker], assignment: GlobalAssignment,
                         frame0_counts: dict[str, int] | None = None) -> dict[tuple[str, int], int]:
    """Bind frame-0 tracks to the global IDs of their matched detections.

    Must be called right after every tracker processed frame 0. The binding
    is stored on each :class:`TrackState` and lives as long as the track.
    Returns the ``(camera_id, track_id) -> global_id`` map.
    """
    binding = {}
    for cam, trk in trackers.items():
        if trk.frame_count != 1:
            raise AssignmentMismatch(f"{cam}: tracker has processed {trk.frame_count} frames, expected 1")
        n_tracks = len(trk.tracks)
        n_matched = assignment.count(cam)
        if frame0_counts is not None and frame0_counts.get(cam, 0) != n_tracks:
            raise AssignmentMismatch(
                f"{cam}: matcher saw {frame0_counts.get(cam, 0)} detections, tracker {n_tracks}")
        if n_matched != n_tracks:
            raise AssignmentMismatch(f"{cam}: assignment has {n_matched} detections, tracker {n_tracks}")
        for t in trk.tracks:
            gid = assignment.global_id(cam, t.last_detection)
            if gid is None:
                raise AssignmentMismatch(f"{cam}: frame-0 detection {t.last_detection} has no global id")
            t.global_id = gid
            binding[(cam, t.track_id)] = gid
    return binding


def frame_global_ids(trackers: dict[str, SortTracker], emitted: dict[str, list[TrackedBox]]):
    """Per-frame ``(camera_id, track_id) -> global_id`` for emitted, bound tracks."""
    out = {}
    for cam, boxes in emitted.items():
        trk = trackers[cam]
        for tb in boxes:
            state = trk.track(tb.track_id)
            if state is not None and state.global_id is not None:
                out[(cam, tb.track_id)] = state.global_id
    return out
