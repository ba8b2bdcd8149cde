"""End-to-end orchestration: masks -> tracking -> identity -> (L/R) -> triangulation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import __version__, kernels
from .disambiguation import resolve_lr
from .errors import CalibrationError, FormatError, InsufficientViews, MaskDecodeError
from .geometry import DEFAULT_CONFIDENCE_THRESHOLD, CameraCalibration, triangulate_pose
from .matching import DEFAULT_GATE, GlobalAssignment, ViewDetections, match_identities
from .records import FORMAT_VERSION, FrameRecord, resolve_mask_path
from .silhouette import DEFAULT_CONNECTIVITY, isolate_largest, mask_to_bbox, read_mask
from .skeleton import KEYPOINT_NAMES, SYMMETRIC_PAIRS, Pose3D
from .tracking import SortTracker, TrackerConfig, frame_global_ids, propagate_global_ids


@dataclass(frozen=True)
class PipelineConfig:
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
    gate: float = DEFAULT_GATE
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    resolve_lr: bool = False
    use_masks: bool = False
    connectivity: int = DEFAULT_CONNECTIVITY

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tracker"].pop("kalman")
        return d


@dataclass
class TrajectoryEntry:
    frame: int
    global_id: int
    pose: Pose3D
    reprojection_rmse: np.ndarray
    views: tuple[str, ...] = ()

    def __post_init__(self):
        self.frame = int(self.frame)
        self.global_id = int(self.global_id)
        self.views = tuple(str(v) for v in self.views)

    def to_dict(self) -> dict:
        valid = self.pose.valid
        return {
            "format_version": FORMAT_VERSION,
            "frame": self.frame,
            "global_id": self.global_id,
            "keypoints": [[float(x) for x in row] if ok else None for row, ok in zip(self.pose.xyz, valid)],
            "valid": [bool(x) for x in valid],
            "reprojection_rmse": [
                float(e) if ok and np.isfinite(e) else None for e, ok in zip(self.reprojection_rmse, valid)
            ],
            "views": list(self.views),
        }

    @classmethod
    def from_dict(cls, d) -> TrajectoryEntry:
        kps = d["keypoints"]
        if len(kps) != len(KEYPOINT_NAMES):
            raise ValueError(f"expected {len(KEYPOINT_NAMES)} keypoints")
        xyz = np.array([[np.nan] * 3 if k is None else k for k in kps], dtype=np.float64)
        err = np.array([np.nan if e is None else e for e in d.get("reprojection_rmse", [None] * len(kps))],
                       dtype=np.float64)
        return cls(int(d["frame"]), int(d["global_id"]), Pose3D(xyz), err, tuple(d.get("views", ())))


@dataclass
class TrajectorySet:
    trajectories: dict[int, list[TrajectoryEntry]] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, entry: TrajectoryEntry) -> None:
        track = self.trajectories.setdefault(entry.global_id, [])
        if track and track[-1].frame >= entry.frame:
            raise AssertionError("trajectory frames must be strictly increasing")
        track.append(entry)

    def entries(self) -> list[TrajectoryEntry]:
        out = [e for track in self.trajectories.values() for e in track]
        return sorted(out, key=lambda e: (e.frame, e.global_id))

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.entries():
                fh.write(json.dumps(e.to_dict(), separators=(",", ":")) + "\n")
            fh.write(json.dumps({"format_version": FORMAT_VERSION, "metadata": self.metadata},
                                separators=(",", ":"), sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> TrajectorySet:
        out = cls()
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    if d.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
                        raise ValueError(f"unsupported format_version {d.get('format_version')}")
                    if "metadata" in d:
                        out.metadata = d["metadata"]
                        continue
                    out.add(TrajectoryEntry.from_dict(d))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError, AssertionError) as exc:
                    raise FormatError(f"{path}: {exc}", line=lineno) from exc
        return out


def ingest_masks(record: FrameRecord, base_dir=".", connectivity: int = DEFAULT_CONNECTIVITY) -> FrameRecord:
    """Replace each detection's bbox with the tight box of its mask's largest component.

    Detections without a mask reference keep their bbox.
    """
    cameras = {}
    for cam, dets in record.cameras.items():
        out = []
        for det in dets:
            if det.mask is None:
                out.append(det)
                continue
            path = resolve_mask_path(det.mask, base_dir)
            if not path.exists():
                raise MaskDecodeError(f"mask file not found: {path}")
            mask = isolate_largest(read_mask(path), connectivity)
            out.append(det.with_bbox(mask_to_bbox(mask)))
        cameras[cam] = out
    return FrameRecord(record.frame, cameras)


class Pipeline:
    """Stateful frame-by-frame runner; frames must arrive in order.

    ``process_frame`` returns the trajectory entries of that frame only, so
    streaming a file frame by frame gives exactly the batch result.
    """

    def __init__(self, calibs: Sequence[CameraCalibration], config: PipelineConfig | None = None,
                 base_dir="."):
        self.config = config or PipelineConfig()
        self.config.tracker.validate()
        self.calibs = {c.camera_id: c for c in calibs}
        if len(self.calibs) < 2:
            raise CalibrationError("the pipeline needs at least 2 calibrated cameras")
        self.base_dir = Path(base_dir)
        self.trackers = {cam: SortTracker(self.config.tracker, cam) for cam in self.calibs}
        self.assignment: GlobalAssignment | None = None
        self.unassigned: dict[str, set[int]] = {cam: set() for cam in self.calibs}
        self.n_frames = 0
        self.lr_swaps = 0
        # (camera, emitted track, global id or None) for the latest frame
        self.last_tracks: list[tuple[str, object, int | None]] = []

    def process_frame(self, record: FrameRecord) -> list[TrajectoryEntry]:
        unknown = set(record.cameras) - set(self.calibs)
        if unknown:
            raise CalibrationError(f"frame {record.frame}: uncalibrated camera(s) {sorted(unknown)}")
        if self.config.use_masks:
            record = ingest_masks(record, self.base_dir, self.config.connectivity)

        emitted = {}
        for cam, trk in self.trackers.items():
            dets = record.detections(cam)
            emitted[cam] = trk.step([(d.bbox, d.confidence) for d in dets])

        if self.assignment is None:
            self._bind_identities(record)
        gids = frame_global_ids(self.trackers, emitted)

        by_gid: dict[int, list] = {}
        self.last_tracks = []
        for cam in sorted(emitted):
            for tb in emitted[cam]:
                gid = gids.get((cam, tb.track_id))
                self.last_tracks.append((cam, tb, gid))
                if gid is None:
                    self.unassigned[cam].add(tb.track_id)
                    continue
                by_gid.setdefault(gid, []).append((self.calibs[cam], record.detections(cam)[tb.detection_index].pose))

        entries = []
        for gid in sorted(by_gid):
            views = by_gid[gid]
            if len(views) < 2:
                continue
            if self.config.resolve_lr:
                corrected, flags, _ = resolve_lr(views, SYMMETRIC_PAIRS, self.config.confidence_threshold)
                self.lr_swaps += int(flags.sum())
                views = [(c, p) for (c, _), p in zip(views, corrected)]
            pose, err = triangulate_pose(views, self.config.confidence_threshold)
            entries.append(TrajectoryEntry(record.frame, gid, pose, err, tuple(c.camera_id for c, _ in views)))
        self.n_frames += 1
        return entries

    def _bind_identities(self, record: FrameRecord) -> None:
        views = [ViewDetections(cam, [d.pose for d in record.detections(cam)])
                 for cam in sorted(self.calibs) if record.detections(cam)]
        if len(views) < 2:
            raise InsufficientViews(f"first frame {record.frame} has detections in {len(views)} view(s); need 2")
        self.assignment = match_identities(views, self.calibs, self.config.gate, self.config.confidence_threshold)
        counts = {cam: len(record.detections(cam)) for cam in self.calibs}
        propagate_global_ids(self.trackers, self.assignment, counts)

    def metadata(self) -> dict:
        return {
            "toolkit": "pigeonpose",
            "version": __version__,
            "kernel_backend": kernels.BACKEND,
            "config": self.config.to_dict(),
            "rig": [self.calibs[c].to_dict() for c in sorted(self.calibs)],
            "keypoints": list(KEYPOINT_NAMES),
            "n_frames": self.n_frames,
            "n_global_ids": 0 if self.assignment is None else self.assignment.n_ids,
            "matching_cost": None if self.assignment is None else self.assignment.total_cost,
            "unassigned_tracks": {cam: sorted(ids) for cam, ids in sorted(self.unassigned.items())},
            "lr_swaps_applied": self.lr_swaps,
        }


def iter_pipeline(calibs, frames: Iterable[FrameRecord], config: PipelineConfig | None = None,
                  base_dir=".") -> Iterator[TrajectoryEntry]:
    pipe = Pipeline(calibs, config, base_dir)
    for rec in frames:
        yield from pipe.process_frame(rec)


def run_pipeline(calibs, frames: Iterable[FrameRecord], config: PipelineConfig | None = None,
                 base_dir=".") -> TrajectorySet:
    pipe = Pipeline(calibs, config, base_dir)
    out = TrajectorySet()
    for rec in frames:
        for entry in pipe.process_frame(rec):
            out.add(entry)
    out.metadata = pipe.metadata()
    return out
