"""Proposals, greedy NMS and counting by detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import AnchorGrid
from .geometry import Box, as_box_array, decode_array, iou_matrix


@dataclass(frozen=True)
class Proposal:
    box: Box
    score: float
    index: int = -1  # source anchor, used for tie-breaking


@dataclass(frozen=True)
class DetectionParams:
    score_threshold: float = 0.5
    nms_iou: float = 0.3
    top_n: int = 300

    def __post_init__(self):
        if not (0.0 <= self.score_threshold <= 1.0 and 0.0 <= self.nms_iou <= 1.0):
            raise ValueError("thresholds must lie in [0, 1]")
        if self.top_n < 1:
            raise ValueError(f"top_n must be >= 1, got {self.top_n}")


def _order(scores: np.ndarray, index: np.ndarray) -> np.ndarray:
    # score descending, anchor index ascending on ties
    return np.lexsort((index, -scores))


def rank_proposals(pred, grid, top_n: int) -> list[Proposal]:
    """Decode every anchor, sort by score and keep the first ``top_n``."""
    anchors = grid.boxes if isinstance(grid, AnchorGrid) else as_box_array(grid)
    scores = np.asarray(pred.u, dtype=np.float64)
    if len(scores) != len(anchors):
        raise ValueError(f"{len(scores)} scores for {len(anchors)} anchors")
    idx = np.arange(len(scores))
    keep = _order(scores, idx)[:top_n]
    boxes = decode_array(pred.p[keep], anchors[keep])
    return [Proposal(Box(*map(float, b)), float(scores[i]), int(i)) for b, i in zip(boxes, keep)]


def _arrays(props):
    boxes = np.array([p.box.as_tuple() for p in props], dtype=np.float64).reshape(-1, 4)
    scores = np.array([p.score for p in props], dtype=np.float64)
    index = np.array([p.index if p.index >= 0 else i for i, p in enumerate(props)])
    return boxes, scores, index


def nms(props, iou_thresh: float) -> list[Proposal]:
    """Greedy suppression: keep the best remaining box, drop any with IoU > ``iou_thresh``."""
    props = list(props)
    if not props:
        return []
    boxes, scores, index = _arrays(props)
    order = _order(scores, index)
    ious = iou_matrix(boxes, boxes)
    alive = np.ones(len(props), dtype=bool)
    kept = []
    for i in order:
        if not alive[i]:
            continue
        kept.append(props[i])
        alive &= ~(ious[i] > iou_thresh)
    return kept


def count_objects(props, params: DetectionParams = DetectionParams()):
    """Return ``(count, detections)`` after score filtering and NMS."""
    confident = [p for p in props if p.score >= params.score_threshold]
    detections = nms(confident, params.nms_iou)
    return len(detections), detections


def detections_csv(scene_id: str, detections) -> str:
    lines = []
    for d in detections:
        x1, y1, x2, y2 = d.box.as_tuple()
        lines.append(f"{scene_id},{x1!r},{y1!r},{x2!r},{y2!r},{d.score!r}")
    return "".join(line + "\n" for line in lines)
