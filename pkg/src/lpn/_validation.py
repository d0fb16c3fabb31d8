"""Input checks shared by the estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.utils.validation import check_array

from .geometry import as_box_array


@dataclass(frozen=True)
class SceneView:
    """The two things the estimator reads from a scene."""

    grid: np.ndarray
    boxes: np.ndarray
    scene_id: str = ""

    @property
    def image_w(self) -> int:
        return self.grid.shape[1]

    @property
    def image_h(self) -> int:
        return self.grid.shape[0]


def check_image(image, name: str = "image") -> np.ndarray:
    img = check_array(image, dtype=np.float32, ensure_2d=True, ensure_all_finite=True, input_name=name)
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got shape {img.shape}")
    return img


def check_boxes(boxes, image: np.ndarray) -> np.ndarray:
    arr = as_box_array(boxes)
    if not np.all(np.isfinite(arr)):
        raise ValueError("boxes must be finite")
    if np.any(arr[:, 2] < arr[:, 0]) or np.any(arr[:, 3] < arr[:, 1]):
        raise ValueError("boxes need x1 <= x2 and y1 <= y2")
    return arr


def check_scenes(X, y=None, require_boxes: bool = True) -> list[SceneView]:
    """Accept scene objects (``.grid`` and ``.boxes``) or images plus a box list ``y``."""
    if X is None:
        raise ValueError("X is None")
    items = list(X)
    if not items:
        raise ValueError("X holds no scenes")
    out = []
    if y is not None:
        ys = list(y)
        if len(ys) != len(items):
            raise ValueError(f"{len(items)} images but {len(ys)} box lists")
        for i, (img, b) in enumerate(zip(items, ys)):
            img = check_image(getattr(img, "grid", img), f"X[{i}]")
            out.append(SceneView(img, check_boxes(b, img), str(i)))
        return out
    for i, s in enumerate(items):
        if hasattr(s, "grid"):
            img = check_image(s.grid, f"X[{i}]")
            boxes = getattr(s, "boxes", None)
            if boxes is None and require_boxes:
                raise ValueError(f"X[{i}] has no ground-truth boxes")
            arr = check_boxes(boxes if boxes is not None else [], img)
            out.append(SceneView(img, arr, getattr(s, "scene_id", str(i))))
        elif require_boxes:
            raise ValueError(f"X[{i}] is a bare image; pass boxes as y or use scene objects")
        else:
            out.append(SceneView(check_image(s, f"X[{i}]"), np.zeros((0, 4)), str(i)))
    return out
