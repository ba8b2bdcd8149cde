"""Keypoint accuracy metrics: RMSE, median error and PCK.

PCK thresholds are a fraction (0.05 or 0.10) of a per-individual scale: the
longer side of the ground-truth bounding box for 2D poses, or the largest
distance between any two valid ground-truth keypoints for 3D poses. A
keypoint is correct when its error is <= the threshold.

Keypoints missing from the ground truth are ignored everywhere. Keypoints
present in the ground truth but missing from the prediction are excluded
from RMSE and median (their distance is undefined) and count as incorrect
for PCK.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DegenerateScale, MissingBBox, NoValidKeypoints, SchemaMismatch
from .silhouette import BoundingBox
from .skeleton import KEYPOINT_NAMES, Pose2D, Pose3D

PCK_FRACTIONS = (0.05, 0.10)


@dataclass(frozen=True)
class EvalPair:
    predicted: Pose2D | Pose3D
    ground_truth: Pose2D | Pose3D
    gt_bbox: BoundingBox | None = None

    def __post_init__(self):
        if type(self.predicted) is not type(self.ground_truth):
            raise SchemaMismatch("prediction and ground truth must both be 2D or both 3D")
        if self.predicted.n_keypoints != self.ground_truth.n_keypoints:
            raise SchemaMismatch("prediction and ground truth keypoint counts differ")

    @property
    def is_3d(self) -> bool:
        return isinstance(self.ground_truth, Pose3D)


def _coords_valid(pose):
    if isinstance(pose, Pose3D):
        return pose.xyz, pose.valid
    return pose.uv, pose.valid() & np.all(np.isfinite(pose.uv), axis=1)


def keypoint_errors(pair: EvalPair):
    """Per-keypoint ``(errors, pred_valid, gt_valid)``; errors are NaN where undefined."""
    p, pv = _coords_valid(pair.predicted)
    g, gv = _coords_valid(pair.ground_truth)
    both = pv & gv
    err = np.full(p.shape[0], np.nan)
    err[both] = np.linalg.norm(p[both] - g[both], axis=1)
    return err, pv, gv


def _scale(pair: EvalPair) -> float:
    if pair.is_3d:
        g, gv = _coords_valid(pair.ground_truth)
        if gv.sum() < 2:
            raise DegenerateScale("3D ground truth needs at least 2 valid keypoints for a PCK scale")
        return float(pdist(g[gv]).max())
    if pair.gt_bbox is None:
        raise MissingBBox("2D PCK needs the ground-truth bounding box")
    return float(max(pair.gt_bbox.width, pair.gt_bbox.height))


def _check_fraction(fraction: float) -> float:
    for f in PCK_FRACTIONS:
        if abs(fraction - f) < 1e-12:
            return f
    raise ValueError(f"PCK fraction must be one of {PCK_FRACTIONS}, got {fraction}")


def _distances(pairs, keypoint=None) -> np.ndarray:
    out = []
    for pair in pairs:
        err, _, _ = keypoint_errors(pair)
        if keypoint is not None:
            err = err[keypoint:keypoint + 1]
        out.append(err[~np.isnan(err)])
    return np.concatenate(out) if out else np.zeros(0)


def rmse(pairs: Sequence[EvalPair], keypoint: int | None = None) -> float:
    d = _distances(pairs, keypoint)
    if d.size == 0:
        raise NoValidKeypoints("no keypoint is valid in both prediction and ground truth")
    # fsum is correctly rounded, so the result does not depend on keypoint order
    return math.sqrt(math.fsum(d * d) / d.size)


def median_error(pairs: Sequence[EvalPair], keypoint: int | None = None) -> float:
    d = _distances(pairs, keypoint)
    if d.size == 0:
        raise NoValidKeypoints("no keypoint is valid in both prediction and ground truth")
    return float(np.median(d))


def pck_counts(pairs: Sequence[EvalPair], fraction: float, keypoint: int | None = None):
    """``(correct, evaluated)`` counts; evaluated = keypoints valid in the ground truth."""
    fraction = _check_fraction(fraction)
    correct = evaluated = 0
    for pair in pairs:
        err, _, gv = keypoint_errors(pair)
        if keypoint is not None:
            sel = np.zeros_like(gv)
            sel[keypoint] = True
            gv = gv & sel
        if not gv.any():
            continue
        thr = fraction * _scale(pair)
        evaluated += int(gv.sum())
        e = err[gv]
        correct += int(np.sum(~np.isnan(e) & (np.nan_to_num(e, nan=np.inf) <= thr)))
    return correct, evaluated


def pck(pairs: Sequence[EvalPair], fraction: float, keypoint: int | None = None) -> float:
    """Percentage of ground-truth keypoints predicted within ``fraction * scale``."""
    correct, evaluated = pck_counts(pairs, fraction, keypoint)
    if evaluated == 0:
        raise NoValidKeypoints("no valid ground-truth keypoints to evaluate")
    return 100.0 * correct / evaluated


@dataclass
class KeypointRow:
    rmse: float
    median: float
    pck05: float
    pck10: float
    n_evaluated: int
    n_ground_truth: int


@dataclass
class MetricsReport:
    rmse: float
    median: float
    pck05: float
    pck10: float
    n_evaluated: int
    n_ground_truth: int
    unit: str = "px"
    per_keypoint: list[KeypointRow] = field(default_factory=list)
    keypoint_names: tuple = KEYPOINT_NAMES

    def to_dict(self) -> dict:
        def _num(x):
            return None if x is None or not np.isfinite(x) else round(float(x), 9)

        return {
            "format_version": 1,
            "unit": self.unit,
            "rmse": _num(self.rmse),
            "median": _num(self.median),
            "pck05": _num(self.pck05),
            "pck10": _num(self.pck10),
            "n_evaluated": self.n_evaluated,
            "n_ground_truth": self.n_ground_truth,
            "per_keypoint": {
                name: {
                    "rmse": _num(r.rmse),
                    "median": _num(r.median),
                    "pck05": _num(r.pck05),
                    "pck10": _num(r.pck10),
                    "n_evaluated": r.n_evaluated,
                    "n_ground_truth": r.n_ground_truth,
                }
                for name, r in zip(self.keypoint_names, self.per_keypoint)
            },
        }

    def format_table(self) -> str:
        """Plain-text table with rows RMSE, Median, PCK05, PCK10 and one column per keypoint."""
        cols = ["Overall"] + [n for n in self.keypoint_names[: len(self.per_keypoint)]]
        rows = [
            (f"RMSE ({self.unit})", [self.rmse] + [r.rmse for r in self.per_keypoint]),
            (f"Median ({self.unit})", [self.median] + [r.median for r in self.per_keypoint]),
            ("PCK05 (%)", [self.pck05] + [r.pck05 for r in self.per_keypoint]),
            ("PCK10 (%)", [self.pck10] + [r.pck10 for r in self.per_keypoint]),
        ]
        label_w = max(len("Metric/Keypoint"), max(len(r[0]) for r in rows))
        cells = [[_fmt(v) for v in vals] for _, vals in rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
        lines = ["  ".join(["Metric/Keypoint".ljust(label_w)] + [c.rjust(w) for c, w in zip(cols, widths)])]
        for (label, _), row in zip(rows, cells):
            lines.append("  ".join([label.ljust(label_w)] + [c.rjust(w) for c, w in zip(row, widths)]))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return "-" if v is None or not np.isfinite(v) else f"{v:.1f}" if abs(v) >= 0.05 or v == 0 else f"{v:.2e}"


def _safe(fn, *args):
    try:
        return fn(*args)
    except NoValidKeypoints:
        return float("nan")


def per_keypoint_report(pairs: Sequence[EvalPair], unit: str = "px", scale: float = 1.0) -> MetricsReport:
    """All four metrics overall and per keypoint index.

    ``scale`` multiplies distance metrics only (e.g. 1000 to report meters as
    mm); PCK is scale free.
    """
    pairs = list(pairs)
    if not pairs:
        raise NoValidKeypoints("no evaluation pairs")
    n_kp = pairs[0].ground_truth.n_keypoints
    if any(p.ground_truth.n_keypoints != n_kp for p in pairs):
        raise SchemaMismatch("a per-keypoint report needs the same keypoint count in every pair")
    rows = []
    for k in range(n_kp):
        c05, n_gt = pck_counts(pairs, 0.05, k)
        c10, _ = pck_counts(pairs, 0.10, k)
        n_ev = int(_distances(pairs, k).size)
        rows.append(KeypointRow(
            scale * _safe(rmse, pairs, k),
            scale * _safe(median_error, pairs, k),
            100.0 * c05 / n_gt if n_gt else float("nan"),
            100.0 * c10 / n_gt if n_gt else float("nan"),
            n_ev,
            n_gt,
        ))
    c05, n_gt = pck_counts(pairs, 0.05)
    c10, _ = pck_counts(pairs, 0.10)
    if n_gt == 0:
        raise NoValidKeypoints("no valid ground-truth keypoints to evaluate")
    report = MetricsReport(
        scale * rmse(pairs),
        scale * median_error(pairs),
        100.0 * c05 / n_gt,
        100.0 * c10 / n_gt,
        int(_distances(pairs).size),
        n_gt,
        unit,
        rows,
        tuple(KEYPOINT_NAMES[:n_kp]) if n_kp == len(KEYPOINT_NAMES) else tuple(f"kp{i}" for i in range(n_kp)),
    )
    assert 0.0 <= report.pck05 <= report.pck10 <= 100.0
    return report
