"""Average recall over an IoU grid, and counting errors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import as_box_array, iou_matrix

DEFAULT_IOU_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class RecallCurve:
    thresholds: tuple[float, ...]
    recall_at: tuple[float, ...]
    ar: float
    n_gt: int = 0


@dataclass(frozen=True)
class CountingReport:
    pairs: tuple[tuple[int, int], ...]  # (ground truth y, predicted f)
    mae: float
    rmse: float
    scene_ids: tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return len(self.pairs)

    def to_dict(self) -> dict:
        rows = []
        for i, (y, f) in enumerate(self.pairs):
            sid = self.scene_ids[i] if i < len(self.scene_ids) else str(i)
            rows.append({"scene_id": sid, "y": y, "f": f})
        return {"n": self.n, "mae": self.mae, "rmse": self.rmse, "scenes": rows}


def _prop_boxes(props):
    """Proposals (objects with ``.box``) or plain boxes, as an (N, 4) array."""
    if isinstance(props, np.ndarray):
        return as_box_array(props)
    props = list(props)
    if props and hasattr(props[0], "box"):
        return np.array([p.box.as_tuple() for p in props], dtype=np.float64).reshape(-1, 4)
    return as_box_array(props)


def recall_at_iou(props, gts, iou_t: float) -> float:
    """Greedy one-to-one recall.

    Proposals are taken in the order given (score order); each claims the
    unclaimed gt it overlaps most, provided that IoU is at least ``iou_t``.
    Empty ground truth gives recall 1.
    """
    gts = as_box_array(gts)
    if len(gts) == 0:
        return 1.0
    boxes = _prop_boxes(props)
    if len(boxes) == 0:
        return 0.0
    return _greedy_recall(iou_matrix(boxes, gts), iou_t)


def _greedy_recall(ious: np.ndarray, iou_t: float) -> float:
    n_gt = ious.shape[1]
    free = np.ones(n_gt, dtype=bool)
    claimed = 0
    for row in ious:
        cand = np.where(free & (row >= iou_t), row, -1.0)
        j = int(np.argmax(cand))
        if cand[j] >= 0:
            free[j] = False
            claimed += 1
            if claimed == n_gt:
                break
    return claimed / n_gt


def average_recall(props, gts, thresholds=DEFAULT_IOU_GRID) -> RecallCurve:
    thresholds = tuple(float(t) for t in thresholds)
    if not thresholds:
        raise ValueError("threshold grid is empty")
    if any(not 0.5 <= t <= 1.0 for t in thresholds):
        raise ValueError(f"AR thresholds must lie in [0.5, 1]: {thresholds}")
    gts = as_box_array(gts)
    boxes = _prop_boxes(props)
    if len(gts) == 0:
        recalls = [1.0] * len(thresholds)
    elif len(boxes) == 0:
        recalls = [0.0] * len(thresholds)
    else:
        ious = iou_matrix(boxes, gts)
        recalls = [_greedy_recall(ious, t) for t in thresholds]
    return RecallCurve(thresholds, tuple(recalls), float(np.mean(recalls)), len(gts))


def counting_errors(pairs, scene_ids=()) -> CountingReport:
    """MAE and RMSE over ``(y, f)`` pairs."""
    pairs = tuple((int(y), int(f)) for y, f in pairs)
    if not pairs:
        raise ValueError("counting report needs at least one scene")
    err = np.array([f - y for y, f in pairs], dtype=np.float64)
    mae = float(np.mean(np.abs(err)))
    rmse = math.sqrt(float(np.mean(err * err)))
    return CountingReport(pairs, mae, rmse, tuple(scene_ids))
