"""Default-box tiling and foreground/background assignment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import as_box_array, iou_matrix

FOREGROUND = 1
BACKGROUND = 0
IGNORE = -1

DEFAULT_SIZES = ((16.0, 16.0), (40.0, 40.0), (100.0, 100.0))


class AnchorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AnchorGrid:
    """Tiled default boxes.

    ``boxes`` is ordered row-major over lattice positions (y outer, x inner),
    then by size, then by aspect ratio.
    """

    image_w: int
    image_h: int
    stride: int
    sizes: tuple[tuple[float, float], ...]
    aspect_ratios: tuple[float, ...]
    boxes: np.ndarray = field(repr=False, compare=False)
    cross_boundary: np.ndarray = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def centers(self) -> np.ndarray:
        return np.stack(
            [(self.boxes[:, 0] + self.boxes[:, 2]) / 2, (self.boxes[:, 1] + self.boxes[:, 3]) / 2],
            axis=1,
        )

    @property
    def anchors_per_position(self) -> int:
        return len(self.sizes) * len(self.aspect_ratios)


def generate_anchors(
    image_w: int,
    image_h: int,
    stride: int = 8,
    sizes=DEFAULT_SIZES,
    aspect_ratios=(1.0,),
) -> AnchorGrid:
    """Tile default boxes with centers on ``(i + 0.5) * stride``.

    An aspect ratio ``r`` scales a ``(w, h)`` size to ``(w * sqrt(r), h / sqrt(r))``
    so area is preserved and ``r`` is the width/height ratio.
    Anchors crossing the image border are kept and flagged.
    """
    if stride < 1:
        raise AnchorConfigError(f"stride must be >= 1, got {stride}")
    if image_w <= 0 or image_h <= 0:
        raise AnchorConfigError(f"image size must be positive, got {image_w}x{image_h}")
    sizes = tuple((float(w), float(h)) for w, h in sizes)
    aspect_ratios = tuple(float(r) for r in aspect_ratios)
    if not sizes:
        raise AnchorConfigError("anchor size list is empty")
    if not aspect_ratios or any(r <= 0 for r in aspect_ratios):
        raise AnchorConfigError(f"aspect ratios must be non-empty and positive: {aspect_ratios}")
    if any(w <= 0 or h <= 0 for w, h in sizes):
        raise AnchorConfigError(f"anchor sizes must be positive: {sizes}")

    nx = math.ceil(image_w / stride)
    ny = math.ceil(image_h / stride)
    shapes = np.array(
        [(w * math.sqrt(r), h / math.sqrt(r)) for w, h in sizes for r in aspect_ratios]
    )
    xs = (np.arange(nx) + 0.5) * stride
    ys = (np.arange(ny) + 0.5) * stride
    cy, cx = np.meshgrid(ys, xs, indexing="ij")
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)

    c = np.repeat(centers, len(shapes), axis=0)
    s = np.tile(shapes, (len(centers), 1))
    boxes = np.concatenate([c - s / 2, c + s / 2], axis=1)
    cross = (
        (boxes[:, 0] < 0) | (boxes[:, 1] < 0) | (boxes[:, 2] > image_w) | (boxes[:, 3] > image_h)
    )
    boxes.setflags(write=False)
    cross.setflags(write=False)
    return AnchorGrid(int(image_w), int(image_h), int(stride), sizes, aspect_ratios, boxes, cross)


@dataclass(frozen=True)
class MatchResult:
    labels: np.ndarray  # FOREGROUND / BACKGROUND / IGNORE per anchor
    matched_gt: np.ndarray  # argmax-IoU gt index, -1 when there are no gts
    max_iou: np.ndarray

    @property
    def foreground(self) -> np.ndarray:
        return self.labels == FOREGROUND

    @property
    def background(self) -> np.ndarray:
        return self.labels == BACKGROUND

    @property
    def n_fg(self) -> int:
        return int(np.count_nonzero(self.labels == FOREGROUND))

    @property
    def n_bg(self) -> int:
        return int(np.count_nonzero(self.labels == BACKGROUND))


def match_anchors(
    grid,
    gts,
    pos_thresh: float = 0.7,
    neg_thresh: float = 0.3,
    exclude_cross_boundary: bool = False,
) -> MatchResult:
    """Label anchors against ground-truth boxes.

    Foreground: IoU > ``pos_thresh`` with any gt, or the highest-IoU anchor
    of some gt (all tied anchors). Background: max IoU < ``neg_thresh`` and
    not foreground. Everything else is ignored. ``grid`` may be an
    :class:`AnchorGrid` or a plain (N, 4) array.

    With ``exclude_cross_boundary`` anchors that leave the image are set to
    ignore and take no part in the best-match rule.
    """
    if not 0.0 <= neg_thresh <= pos_thresh <= 1.0:
        raise ValueError(f"need 0 <= neg_thresh <= pos_thresh <= 1, got {neg_thresh}, {pos_thresh}")
    anchors = grid.boxes if isinstance(grid, AnchorGrid) else as_box_array(grid)
    gts = as_box_array(gts)
    n = len(anchors)

    if len(gts) == 0:
        labels = np.full(n, BACKGROUND, dtype=np.int8)
        return MatchResult(labels, np.full(n, -1, dtype=np.int64), np.zeros(n))

    ious = iou_matrix(anchors, gts)
    eligible = np.ones(n, dtype=bool)
    if exclude_cross_boundary and isinstance(grid, AnchorGrid):
        eligible = ~grid.cross_boundary
        ious = np.where(eligible[:, None], ious, 0.0)

    matched = np.argmax(ious, axis=1)
    max_iou = ious[np.arange(n), matched]

    labels = np.full(n, IGNORE, dtype=np.int8)
    labels[(max_iou < neg_thresh) & eligible] = BACKGROUND
    labels[max_iou > pos_thresh] = FOREGROUND

    best_per_gt = ious.max(axis=0)
    best = (ious == best_per_gt[None, :]) & (best_per_gt[None, :] > 0)
    labels[best.any(axis=1)] = FOREGROUND

    return MatchResult(labels, matched.astype(np.int64), max_iou)
