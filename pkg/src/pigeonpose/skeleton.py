"""The nine-keypoint pigeon skeleton and pose containers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import SchemaMismatch

KEYPOINT_NAMES = (
    "beak",
    "nose",
    "eye_left",
    "eye_right",
    "shoulder_left",
    "shoulder_right",
    "keel_top",
    "keel_bottom",
    "tail",
)
N_KEYPOINTS = len(KEYPOINT_NAMES)
KEYPOINT_INDEX = {name: i for i, name in enumerate(KEYPOINT_NAMES)}


class SymmetricPair(NamedTuple):
    left_index: int
    right_index: int

    def validate(self, n_keypoints: int = N_KEYPOINTS) -> None:
        if self.left_index == self.right_index:
            raise ValueError("symmetric pair indices must differ")
        for i in self:
            if not 0 <= i < n_keypoints:
                raise ValueError(f"keypoint index {i} out of range")


EYES = SymmetricPair(KEYPOINT_INDEX["eye_left"], KEYPOINT_INDEX["eye_right"])
SHOULDERS = SymmetricPair(KEYPOINT_INDEX["shoulder_left"], KEYPOINT_INDEX["shoulder_right"])
SYMMETRIC_PAIRS = (EYES, SHOULDERS)


@dataclass(frozen=True)
class Pose2D:
    """Image-space keypoints.

    Attributes
    ----------
    uv : ndarray, shape (K, 2)
        Pixel coordinates.
    confidence : ndarray, shape (K,)
        Per-keypoint confidence in [0, 1]. Zero marks a missing keypoint;
        its ``uv`` may then hold anything, including NaN.
    """

    uv: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        uv = np.array(self.uv, dtype=np.float64).reshape(-1, 2)
        conf = np.array(self.confidence, dtype=np.float64).reshape(-1)
        if conf.shape[0] != uv.shape[0]:
            raise SchemaMismatch(f"{uv.shape[0]} keypoints but {conf.shape[0]} confidences")
        if np.any(~np.isfinite(conf)) or np.any((conf < 0) | (conf > 1)):
            raise ValueError("confidence must lie in [0, 1]")
        if np.any(~np.isfinite(uv[conf > 0])):
            raise ValueError("keypoints with positive confidence must have finite coordinates")
        uv.flags.writeable = False
        conf.flags.writeable = False
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "confidence", conf)

    @property
    def n_keypoints(self) -> int:
        return self.uv.shape[0]

    @classmethod
    def from_array(cls, arr) -> Pose2D:
        """Build from a ``(K, 3)`` array of ``(u, v, confidence)`` rows."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise SchemaMismatch(f"expected (K, 3) keypoint array, got shape {arr.shape}")
        return cls(arr[:, :2], arr[:, 2])

    def to_array(self) -> np.ndarray:
        return np.column_stack([self.uv, self.confidence])

    def valid(self, threshold: float = 0.0) -> np.ndarray:
        if threshold <= 0:
            return self.confidence > 0
        return self.confidence >= threshold

    def swapped(self, pair: SymmetricPair) -> Pose2D:
        order = np.arange(self.n_keypoints)
        order[[pair.left_index, pair.right_index]] = pair.right_index, pair.left_index
        return Pose2D(self.uv[order], self.confidence[order])


@dataclass(frozen=True)
class Pose3D:
    """World-space keypoints in meters; invalid keypoints are stored as NaN rows."""

    xyz: np.ndarray

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=np.float64).reshape(-1, 3)
        # a keypoint is either fully finite or fully invalid
        partial = ~np.all(np.isfinite(xyz), axis=1)
        xyz[partial] = np.nan
        xyz.flags.writeable = False
        object.__setattr__(self, "xyz", xyz)

    @property
    def valid(self) -> np.ndarray:
        return np.all(np.isfinite(self.xyz), axis=1)

    @property
    def n_keypoints(self) -> int:
        return self.xyz.shape[0]

    @classmethod
    def invalid(cls, n_keypoints: int = N_KEYPOINTS) -> Pose3D:
        return cls(np.full((n_keypoints, 3), np.nan))


def check_schema(poses) -> int:
    """Return the shared keypoint count or raise :class:`SchemaMismatch`."""
    counts = {p.n_keypoints for p in poses}
    if len(counts) > 1:
        raise SchemaMismatch(f"poses disagree on keypoint count: {sorted(counts)}")
    return counts.pop() if counts else N_KEYPOINTS
