"""
Box algebra
===========

Axis-aligned boxes in continuous pixel coordinates, stored as corners
``(x1, y1, x2, y2)`` with ``x1 <= x2`` and ``y1 <= y2``. Area is
``(x2 - x1) * (y2 - y1)`` exactly; no +1 pixel convention is applied.

Scalar helpers operate on :class:`Box`; the ``*_array`` variants take
``(N, 4)`` numpy arrays in the same corner layout and are what the rest
of the package uses on hot paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class InvalidBoxError(ValueError):
    """Raised when a box cannot take part in an operation (e.g. zero width)."""


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise InvalidBoxError(f"corners out of order: {self}")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "Box":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @property
    def w(self) -> float:
        return self.x2 - self.x1

    @property
    def h(self) -> float:
        return self.y2 - self.y1

    @property
    def cx(self) -> float:
        return (self.x1 + self.x2) / 2.0

    @property
    def cy(self) -> float:
        return (self.y1 + self.y2) / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def is_degenerate(self) -> bool:
        return self.w <= 0 or self.h <= 0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


class OffsetVector(NamedTuple):
    """Regression targets of a box relative to a default box."""

    tx: float
    ty: float
    tw: float
    th: float


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 for disjoint or zero-union pairs."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def encode_offsets(gt: Box, default: Box) -> OffsetVector:
    """Offsets of ``gt`` relative to ``default``.

    tx = (g.cx - d.cx) / d.w, ty = (g.cy - d.cy) / d.h,
    tw = log(g.w / d.w),     th = log(g.h / d.h).
    """
    for name, box in (("default", default), ("gt", gt)):
        if box.is_degenerate:
            raise InvalidBoxError(f"{name} box has non-positive size: {box}")
    return OffsetVector(
        (gt.cx - default.cx) / default.w,
        (gt.cy - default.cy) / default.h,
        math.log(gt.w / default.w),
        math.log(gt.h / default.h),
    )


def decode_offsets(o: OffsetVector, default: Box) -> Box:
    if default.is_degenerate:
        raise InvalidBoxError(f"default box has non-positive size: {default}")
    tx, ty, tw, th = o
    return Box.from_center(
        default.cx + tx * default.w,
        default.cy + ty * default.h,
        default.w * math.exp(tw),
        default.h * math.exp(th),
    )


# ---------------------------------------------------------------------------
# vectorized forms


def as_box_array(boxes) -> np.ndarray:
    """Coerce a sequence of :class:`Box` or an array-like to a float (N, 4) array."""
    if isinstance(boxes, np.ndarray):
        arr = boxes.astype(np.float64, copy=False)
    else:
        boxes = list(boxes)
        if boxes and isinstance(boxes[0], Box):
            arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
        else:
            arr = np.asarray(boxes, dtype=np.float64)
    return arr.reshape(-1, 4)


def box_areas(boxes: np.ndarray) -> np.ndarray:
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU, shape (len(a), len(b))."""
    a = as_box_array(a)
    b = as_box_array(b)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = box_areas(a)[:, None] + box_areas(b)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=(union > 0) & (inter > 0))
    return out


def to_center(boxes: np.ndarray) -> np.ndarray:
    """(x1, y1, x2, y2) -> (cx, cy, w, h)."""
    return np.stack(
        [
            (boxes[:, 0] + boxes[:, 2]) / 2.0,
            (boxes[:, 1] + boxes[:, 3]) / 2.0,
            boxes[:, 2] - boxes[:, 0],
            boxes[:, 3] - boxes[:, 1],
        ],
        axis=1,
    )


def from_center(cxcywh: np.ndarray) -> np.ndarray:
    cx, cy, w, h = cxcywh.T
    return np.stack([cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0], axis=1)


def encode_array(gt: np.ndarray, default: np.ndarray) -> np.ndarray:
    """Row-wise :func:`encode_offsets` for aligned (N, 4) arrays."""
    g = to_center(as_box_array(gt))
    d = to_center(as_box_array(default))
    if np.any(d[:, 2:] <= 0) or np.any(g[:, 2:] <= 0):
        bad = np.flatnonzero(np.any(d[:, 2:] <= 0, axis=1) | np.any(g[:, 2:] <= 0, axis=1))
        raise InvalidBoxError(f"non-positive box size at rows {bad[:10].tolist()}")
    return np.stack(
        [
            (g[:, 0] - d[:, 0]) / d[:, 2],
            (g[:, 1] - d[:, 1]) / d[:, 3],
            np.log(g[:, 2] / d[:, 2]),
            np.log(g[:, 3] / d[:, 3]),
        ],
        axis=1,
    )


def decode_array(offsets: np.ndarray, default: np.ndarray) -> np.ndarray:
    d = to_center(as_box_array(default))
    o = np.asarray(offsets, dtype=np.float64).reshape(-1, 4)
    return from_center(
        np.stack(
            [
                d[:, 0] + o[:, 0] * d[:, 2],
                d[:, 1] + o[:, 1] * d[:, 3],
                d[:, 2] * np.exp(o[:, 2]),
                d[:, 3] * np.exp(o[:, 3]),
            ],
            axis=1,
        )
    )
