"""Binary silhouette masks: cropping, connected components, largest-blob isolation.

Masks are plain 2-D boolean numpy arrays indexed ``mask[y, x]``. Pixel
``(x, y)`` covers the half-open square ``[x, x+1) x [y, y+1)``, so a bounding
box's max edges are exclusive.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import kernels
from .errors import EmptyIntersection, EmptyMask, MaskDecodeError

DEFAULT_CONNECTIVITY = 8


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = tuple(float(v) for v in (self.x_min, self.y_min, self.x_max, self.y_max))
        for name, v in zip(("x_min", "y_min", "x_max", "y_max"), vals):
            object.__setattr__(self, name, v)
        if not all(np.isfinite(vals)):
            raise ValueError(f"non-finite bounding box {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate bounding box {vals}")

    def __iter__(self):
        return iter((self.x_min, self.y_min, self.x_max, self.y_max))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array(tuple(self), dtype=np.float64)

    def contains(self, u, v) -> bool:
        return self.x_min <= u < self.x_max and self.y_min <= v < self.y_max


def as_mask(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise ValueError(f"mask must be a non-empty 2-D raster, got shape {m.shape}")
    return m.astype(bool, copy=False)


def crop(mask, box: BoundingBox) -> np.ndarray:
    """Sub-raster covered by ``box`` after clamping it to the image.

    Fractional box edges are widened to whole pixels.
    """
    m = as_mask(mask)
    h, w = m.shape
    x0 = max(int(np.floor(box.x_min)), 0)
    y0 = max(int(np.floor(box.y_min)), 0)
    x1 = min(int(np.ceil(box.x_max)), w)
    y1 = min(int(np.ceil(box.y_max)), h)
    if x1 <= x0 or y1 <= y0:
        raise EmptyIntersection(f"box {tuple(box)} does not intersect a {w}x{h} image")
    return m[y0:y1, x0:x1].copy()


def connected_components(mask, connectivity: int = DEFAULT_CONNECTIVITY):
    """Label foreground components.

    Returns ``(labels, sizes)``: ``labels`` is an int32 raster with 0 for
    background and ``1..K`` numbered in order of each component's first pixel
    in raster scan; ``sizes[k - 1]`` is the pixel count of component ``k``.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    m = as_mask(mask)
    labels = np.zeros(m.shape, dtype=np.int32)
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        return labels, np.zeros(0, dtype=np.int64)
    cols = np.flatnonzero(m.any(axis=0))
    # label only the foreground's bounding window; raster order is unchanged
    win = (slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1))
    sub = kernels.label_components(np.ascontiguousarray(m[win]), connectivity == 8)
    labels[win] = sub
    sizes = np.bincount(sub.ravel())[1:]
    return labels, sizes


def isolate_largest(mask, connectivity: int = DEFAULT_CONNECTIVITY) -> np.ndarray:
    """Keep only the largest connected component.

    Ties go to the component whose first pixel comes earliest in raster order.
    """
    labels, sizes = connected_components(mask, connectivity)
    if sizes.size == 0:
        return np.zeros(labels.shape, dtype=bool)
    # argmax returns the first maximum, i.e. the earliest-discovered component
    return labels == int(np.argmax(sizes)) + 1


def mask_to_bbox(mask) -> BoundingBox:
    m = as_mask(mask)
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        raise EmptyMask("mask has no foreground pixels")
    cols = np.flatnonzero(m.any(axis=0))
    return BoundingBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def bbox_iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def read_mask(path) -> np.ndarray:
    """Decode a PGM/PNG grayscale mask; nonzero pixels are foreground."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L") if img.mode not in ("L", "1", "I", "I;16") else img)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise MaskDecodeError(f"cannot decode mask {path}: {exc}") from exc
    if arr.ndim != 2 or arr.size == 0:
        raise MaskDecodeError(f"mask {path} is not a single-channel image")
    return arr != 0


def write_mask(path, mask) -> None:
    """Write a mask as 8-bit grayscale (255 = foreground); format from the suffix."""
    m = as_mask(mask)
    Image.fromarray(np.where(m, 255, 0).astype(np.uint8)).save(Path(path))
