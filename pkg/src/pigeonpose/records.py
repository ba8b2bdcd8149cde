"""Per-frame detection records and their JSON Lines encoding.

One line per frame::

    {"format_version": 1, "frame": 0,
     "cameras": {"cam0": [{"bbox": [x0, y0, x1, y1],
                           "keypoints": [[u, v, c], ... 9 rows],
                           "mask": "masks/frame0_cam0_id0.pgm" or null}]}}

Keypoint order is fixed by :data:`pigeonpose.skeleton.KEYPOINT_NAMES`. A file
may start with a ``{"format_version": 1, "header": {...}}`` line describing
how it was produced; readers skip it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import FormatError
from .silhouette import BoundingBox
from .skeleton import N_KEYPOINTS, Pose2D

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Detection:
    bbox: BoundingBox
    pose: Pose2D
    mask: str | None = None

    @property
    def confidence(self) -> float:
        return float(np.mean(self.pose.confidence))

    def with_bbox(self, bbox: BoundingBox) -> Detection:
        return replace(self, bbox=bbox)

    def to_dict(self) -> dict:
        return {
            "bbox": [float(x) for x in self.bbox],
            "keypoints": [[float(x) for x in row] for row in self.pose.to_array()],
            "mask": self.mask,
        }

    @classmethod
    def from_dict(cls, d) -> Detection:
        if not isinstance(d, dict):
            raise ValueError("detection must be an object")
        kp = np.asarray(d["keypoints"], dtype=np.float64)
        if kp.shape != (N_KEYPOINTS, 3):
            raise ValueError(f"expected {N_KEYPOINTS} keypoints of (u, v, c), got shape {kp.shape}")
        bbox = d["bbox"]
        if len(bbox) != 4:
            raise ValueError("bbox must have 4 numbers")
        mask = d.get("mask")
        if mask is not None and not isinstance(mask, str):
            raise ValueError("mask must be a path string or null")
        return cls(BoundingBox(*(float(x) for x in bbox)), Pose2D.from_array(kp), mask)


@dataclass
class FrameRecord:
    frame: int
    cameras: dict[str, list[Detection]] = field(default_factory=dict)

    def detections(self, camera_id: str) -> list[Detection]:
        # a camera absent from a frame simply has no detections there
        return self.cameras.get(camera_id, [])

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "frame": self.frame,
            "cameras": {cam: [d.to_dict() for d in dets] for cam, dets in self.cameras.items()},
        }

    @classmethod
    def from_dict(cls, d) -> FrameRecord:
        if not isinstance(d, dict):
            raise ValueError("frame record must be a JSON object")
        version = d.get("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported format_version {version}")
        frame = d["frame"]
        if not isinstance(frame, int) or isinstance(frame, bool) or frame < 0:
            raise ValueError("frame must be a non-negative integer")
        cams = d.get("cameras", {})
        if not isinstance(cams, dict):
            raise ValueError("cameras must be an object")
        return cls(frame, {str(cam): [Detection.from_dict(x) for x in dets] for cam, dets in cams.items()})


def read_frames(path) -> Iterator[FrameRecord]:
    """Stream frame records from a JSONL file, validating frame order."""
    last = -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                if isinstance(d, dict) and "header" in d:
                    continue
                rec = FrameRecord.from_dict(d)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}: {exc}", line=lineno) from exc
            if rec.frame <= last:
                raise FormatError(f"{path}: frame {rec.frame} not after frame {last}", line=lineno)
            last = rec.frame
            yield rec


def write_frames(path, frames, header: dict | None = None) -> None:
    """Write frame records as JSONL, preceded by an optional header object."""
    with open(path, "w") as fh:
        if header is not None:
            fh.write(json.dumps({"format_version": FORMAT_VERSION, "header": header},
                                separators=(",", ":"), sort_keys=True) + "\n")
        for rec in frames:
            fh.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")


def resolve_mask_path(mask: str, base_dir) -> Path:
    p = Path(mask)
    return p if p.is_absolute() else Path(base_dir) / p
