"""
Annotations, synthetic parking lots and on-disk formats.

Annotation grammar: one box per line, ``x1 y1 x2 y2 [class]`` as
whitespace-separated integers, corners top-left / bottom-right. The
optional fifth field must be the car tag ``1``. Blank lines are skipped.

Intensity grids are stored as ``b"LPGRID01"`` + width (u32 LE) + height
(u32 LE) followed by ``width * height`` little-endian float32 values,
row-major.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import Box, as_box_array

CAR_TAG = 1
GRID_MAGIC = b"LPGRID01"
_HEADER = struct.Struct("<8sII")


class AnnotationParseError(ValueError):
    def __init__(self, line_no: int, line: str, reason: str):
        super().__init__(f"line {line_no}: {reason}: {line!r}")
        self.line_no = line_no


class SceneConfigError(ValueError):
    pass


class GridFormatError(ValueError):
    pass


@dataclass
class SceneAnnotation:
    scene_id: str
    image_w: int | None
    image_h: int | None
    boxes: np.ndarray  # (N, 4) float corners
    source: str = "parsed"  # or "synthetic"
    lot: str = ""
    tagged: list[bool] | None = None  # per box: fifth field present
    clamped: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.boxes = as_box_array(self.boxes)

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def count(self) -> int:
        return len(self.boxes)

    def box_list(self) -> list[Box]:
        return [Box(*map(float, b)) for b in self.boxes]


def parse_annotations(
    text: str,
    scene_id: str = "",
    image_w: int | None = None,
    image_h: int | None = None,
    lot: str = "",
) -> SceneAnnotation:
    boxes, tagged, warnings, clamped = [], [], [], []
    for line_no, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (4, 5):
            raise AnnotationParseError(line_no, line, f"expected 4 or 5 fields, got {len(fields)}")
        try:
            vals = [int(f) for f in fields]
        except ValueError:
            raise AnnotationParseError(line_no, line, "non-integer field") from None
        if len(vals) == 5 and vals[4] != CAR_TAG:
            raise AnnotationParseError(line_no, line, f"class tag {vals[4]} is not {CAR_TAG}")
        x1, y1, x2, y2 = vals[:4]
        if x1 > x2 or y1 > y2:
            x1, x2 = min(x1, x2), max(x1, x2)
            y1, y2 = min(y1, y2), max(y1, y2)
            warnings.append(f"line {line_no}: corners swapped")
        if image_w is not None and image_h is not None:
            c = (
                min(max(x1, 0), image_w),
                min(max(y1, 0), image_h),
                min(max(x2, 0), image_w),
                min(max(y2, 0), image_h),
            )
            if c != (x1, y1, x2, y2):
                clamped.append(len(boxes))
                warnings.append(f"line {line_no}: clamped to image bounds")
                x1, y1, x2, y2 = c
        boxes.append((x1, y1, x2, y2))
        tagged.append(len(vals) == 5)
    return SceneAnnotation(
        scene_id,
        image_w,
        image_h,
        np.array(boxes, dtype=np.float64).reshape(-1, 4),
        "parsed",
        lot,
        tagged,
        clamped,
        warnings,
    )


def emit_annotations(ann: SceneAnnotation) -> str:
    """Canonical text form; boxes are written as rounded integers."""
    lines = []
    for i, b in enumerate(ann.boxes):
        vals = [str(int(round(v))) for v in b]
        if ann.tagged is None or ann.tagged[i]:
            vals.append(str(CAR_TAG))
        lines.append(" ".join(vals))
    return "".join(line + "\n" for line in lines)


def read_annotations(path, **kwargs) -> SceneAnnotation:
    return parse_annotations(Path(path).read_text(), **kwargs)


# ---------------------------------------------------------------------------
# intensity grids


def write_grid(path, grid: np.ndarray) -> None:
    grid = np.asarray(grid)
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(GRID_MAGIC, w, h))
        fh.write(np.ascontiguousarray(grid, dtype="<f4").tobytes())


def read_grid(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise GridFormatError(f"{path}: truncated header")
    magic, w, h = _HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    body = data[_HEADER.size :]
    if len(body) != 4 * w * h:
        raise GridFormatError(f"{path}: expected {4 * w * h} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float32)


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class SceneParams:
    """Layout of one synthetic lot image.

    Slots sit on ``rows`` parallel lines of ``slots_per_row`` positions,
    ``slot_spacing`` apart along a row and ``row_pitch`` apart across rows.
    The lattice is centered in the image and rotated by ``orientation``.
    ``car_w`` is the extent along the row, ``car_h`` across it.
    """

    image_w: int = 256
    image_h: int = 256
    rows: int = 4
    slots_per_row: int = 10
    slot_spacing: float = 22.0
    row_pitch: float = 50.0
    car_w: tuple[float, float] = (12.0, 16.0)
    car_h: tuple[float, float] = (26.0, 34.0)
    jitter: float = 2.0
    occupancy: float = 0.7
    noise: float = 0.1
    orientation: float = 0.0
    car_intensity: tuple[float, float] = (0.6, 1.0)
    background: float = 0.2
    clutter: int = 0  # car-like distractors placed off the lattice, not annotated

    def validate(self) -> None:
        if not 0.0 <= self.occupancy <= 1.0:
            raise SceneConfigError(f"occupancy must be in [0, 1], got {self.occupancy}")
        if self.rows < 1 or self.slots_per_row < 1:
            raise SceneConfigError("need at least one row and one slot")
        if min(self.car_w) <= 0 or min(self.car_h) <= 0:
            raise SceneConfigError("car sizes must be positive")
        if self.car_w[0] > self.car_w[1] or self.car_h[0] > self.car_h[1]:
            raise SceneConfigError("car size ranges must be (min, max)")
        if self.car_w[1] >= self.slot_spacing or (self.rows > 1 and self.car_h[1] >= self.row_pitch):
            raise SceneConfigError("car sizes must be smaller than the slot/row pitch")
        if self.jitter < 0 or self.noise < 0:
            raise SceneConfigError("jitter and noise must be non-negative")
        if self.image_w <= 0 or self.image_h <= 0:
            raise SceneConfigError("image size must be positive")
        if self.clutter < 0:
            raise SceneConfigError(f"clutter must be >= 0, got {self.clutter}")


@dataclass
class SyntheticScene:
    annotation: SceneAnnotation
    grid: np.ndarray  # (image_h, image_w) float32 in [0, 1]
    params: SceneParams
    seed: int

    @property
    def scene_id(self) -> str:
        return self.annotation.scene_id

    @property
    def lot(self) -> str:
        return self.annotation.lot

    @property
    def boxes(self) -> np.ndarray:
        return self.annotation.boxes

    @property
    def image_w(self) -> int:
        return self.grid.shape[1]

    @property
    def image_h(self) -> int:
        return self.grid.shape[0]


def slot_centers(params: SceneParams) -> np.ndarray:
    n, r = params.slots_per_row, params.rows
    along = (np.arange(n) - (n - 1) / 2.0) * params.slot_spacing
    across = (np.arange(r) - (r - 1) / 2.0) * params.row_pitch
    v, u = np.meshgrid(across, along, indexing="ij")
    ct, st = math.cos(params.orientation), math.sin(params.orientation)
    x = params.image_w / 2.0 + u * ct - v * st
    y = params.image_h / 2.0 + u * st + v * ct
    return np.stack([x.ravel(), y.ravel()], axis=1)


def _axis_sizes(params: SceneParams):
    """Car (w, h) ranges in image axes; cars turn with rows closer to vertical."""
    if abs(math.sin(params.orientation)) > abs(math.cos(params.orientation)):
        return params.car_h, params.car_w
    return params.car_w, params.car_h


def _check_layout(params: SceneParams, centers: np.ndarray) -> None:
    (_, wmax), (_, hmax) = _axis_sizes(params)
    j = params.jitter
    lo_x = centers[:, 0] - wmax / 2 - j
    hi_x = centers[:, 0] + wmax / 2 + j
    lo_y = centers[:, 1] - hmax / 2 - j
    hi_y = centers[:, 1] + hmax / 2 + j
    # slack for the rounding of corners to integers
    if lo_x.min() < 0.5 or lo_y.min() < 0.5 or hi_x.max() > params.image_w - 0.5 or hi_y.max() > params.image_h - 0.5:
        raise SceneConfigError("slot lattice does not fit inside the image")
    dx = np.abs(centers[:, None, 0] - centers[None, :, 0])
    dy = np.abs(centers[:, None, 1] - centers[None, :, 1])
    tol = 1e-9  # rotation round-off on exact pitches
    clash = (dx < wmax + 2 * j - tol) & (dy < hmax + 2 * j - tol)
    np.fill_diagonal(clash, False)
    if clash.any():
        raise SceneConfigError("slot spacing allows neighbouring cars to overlap")


def generate_scene(params: SceneParams, seed: int, scene_id: str = "", lot: str = "") -> SyntheticScene:
    """Place cars on the slot lattice and rasterize them.

    Each slot is filled with probability ``occupancy``; all random draws are
    made for every slot so the layout of slot ``k`` does not depend on the
    others.
    """
    params.validate()
    centers = slot_centers(params)
    _check_layout(params, centers)
    n = len(centers)
    rng = np.random.default_rng(seed)

    occupied = rng.random(n) < params.occupancy
    radius = params.jitter * np.sqrt(rng.random(n))
    angle = rng.random(n) * 2 * math.pi
    (wlo, whi), (hlo, hhi) = _axis_sizes(params)
    w = rng.uniform(wlo, whi, n)
    h = rng.uniform(hlo, hhi, n)
    shade = rng.uniform(*params.car_intensity, n)

    cx = centers[:, 0] + radius * np.cos(angle)
    cy = centers[:, 1] + radius * np.sin(angle)
    boxes = np.round(np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1))
    boxes = boxes[occupied]
    shade = shade[occupied]

    image = np.full((params.image_h, params.image_w), params.background, dtype=np.float64)
    noise = rng.normal(0.0, params.noise, image.shape) if params.noise > 0 else 0.0
    for (x1, y1, x2, y2), s in zip(boxes.astype(int), shade):
        image[y1:y2, x1:x2] = s
    for (x1, y1, x2, y2), s in _place_clutter(params, centers, rng):
        image[y1:y2, x1:x2] = s
    image += noise
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    ann = SceneAnnotation(
        scene_id, params.image_w, params.image_h, boxes, "synthetic", lot, [True] * len(boxes)
    )
    return SyntheticScene(ann, image, params, int(seed))


def _place_clutter(params: SceneParams, centers: np.ndarray, rng, tries: int = 200):
    """Rejection-sample distractor rectangles that avoid every slot footprint."""
    if params.clutter == 0:
        return []
    (_, wmax), (_, hmax) = _axis_sizes(params)
    j = params.jitter
    taken = [
        (cx - wmax / 2 - j, cy - hmax / 2 - j, cx + wmax / 2 + j, cy + hmax / 2 + j)
        for cx, cy in centers
    ]
    out = []
    for _ in range(params.clutter):
        for _ in range(tries):
            w = rng.uniform(*params.car_w)
            h = rng.uniform(*params.car_h)
            if rng.random() < 0.5:
                w, h = h, w
            x1 = round(rng.uniform(1, params.image_w - w - 1))
            y1 = round(rng.uniform(1, params.image_h - h - 1))
            box = (x1, y1, x1 + round(w), y1 + round(h))
            s = rng.uniform(*params.car_intensity)
            if not any(
                box[0] < t[2] and t[0] < box[2] and box[1] < t[3] and t[1] < box[3] for t in taken
            ):
                taken.append(box)
                out.append((box, s))
                break
    return out


@dataclass(frozen=True)
class LotSpec:
    name: str
    orientation: float = 0.0


def generate_scenes(
    base: SceneParams,
    n: int,
    seed: int,
    lots=(LotSpec("A"),),
    occupancy_range: tuple[float, float] | None = None,
    prefix: str = "scene",
) -> list[SyntheticScene]:
    """``n`` scenes cycling over ``lots``; per-scene seeds are spawned from ``seed``."""
    lots = list(lots)
    children = np.random.SeedSequence(seed).spawn(n)
    scenes = []
    for i, child in enumerate(children):
        scene_seed = int(child.generate_state(1)[0])
        lot = lots[i % len(lots)]
        params = replace(base, orientation=lot.orientation)
        if occupancy_range is not None:
            lo, hi = occupancy_range
            occ = float(np.random.default_rng(scene_seed ^ 0x5EED).uniform(lo, hi))
            params = replace(params, occupancy=occ)
        scenes.append(generate_scene(params, scene_seed, f"{prefix}_{i:04d}", lot.name))
    return scenes


def load_scene(annotation_path, grid_path, scene_id: str = "", lot: str = "") -> SyntheticScene:
    """Loader hook for externally supplied feature grids (real imagery included)."""
    grid = read_grid(grid_path)
    ann = read_annotations(annotation_path, scene_id=scene_id, image_w=grid.shape[1], image_h=grid.shape[0], lot=lot)
    return SyntheticScene(ann, grid, SceneParams(image_w=grid.shape[1], image_h=grid.shape[0]), -1)


# ---------------------------------------------------------------------------
# manifests


def write_manifest(scenes, out_dir) -> Path:
    """Write annotation + grid files for each scene and a ``manifest.json`` index."""
    out_dir = Path(out_dir)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    (out_dir / "grids").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in scenes:
        ann_rel = f"annotations/{s.scene_id}.txt"
        grid_rel = f"grids/{s.scene_id}.grid"
        (out_dir / ann_rel).write_text(emit_annotations(s.annotation))
        write_grid(out_dir / grid_rel, s.grid)
        entries.append({"scene_id": s.scene_id, "annotation": ann_rel, "grid": grid_rel, "lot": s.lot})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(entries, indent=2) + "\n")
    return path


def read_manifest(path) -> list[SyntheticScene]:
    path = Path(path)
    root = path.parent
    try:
        entries = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(entries, list):
        raise ValueError(f"{path}: manifest must be a JSON list")
    scenes = []
    for e in entries:
        missing = {"scene_id", "annotation", "grid"} - set(e)
        if missing:
            raise ValueError(f"{path}: entry missing {sorted(missing)}")
        scenes.append(
            load_scene(
                os.path.join(root, e["annotation"]),
                os.path.join(root, e["grid"]),
                scene_id=e["scene_id"],
                lot=e.get("lot", ""),
            )
        )
    return scenes


# ---------------------------------------------------------------------------
# splits


def kfold(scenes, k: int, seed: int = 0) -> list[list]:
    """Partition ``scenes`` into ``k`` disjoint folds after a seeded shuffle."""
    scenes = list(scenes)
    if len(scenes) < 2:
        raise ValueError("need at least 2 scenes to split")
    if k < 1:
        raise ValueError(f"fold count must be >= 1, got {k}")
    if k > len(scenes):
        raise ValueError(f"{k} folds requested for {len(scenes)} scenes")
    order = np.random.default_rng(seed).permutation(len(scenes))
    return [[scenes[i] for i in part] for part in np.array_split(order, k)]


def dataset_split(
    scenes,
    *,
    train_fraction: float | None = None,
    folds: int | None = None,
    fold: int = 0,
    test_lots=None,
    seed: int = 0,
):
    """Return ``(train, test)``.

    Exactly one of ``train_fraction``, ``folds`` (with ``fold`` as the
    held-out index) or ``test_lots`` (hold out whole lots) selects the
    protocol.
    """
    scenes = list(scenes)
    if len(scenes) < 2:
        raise ValueError("need at least 2 scenes to split")
    chosen = [train_fraction is not None, folds is not None, test_lots is not None]
    if sum(chosen) != 1:
        raise ValueError("pass exactly one of train_fraction, folds, test_lots")
    if test_lots is not None:
        test_lots = set(test_lots)
        train = [s for s in scenes if s.lot not in test_lots]
        test = [s for s in scenes if s.lot in test_lots]
        return train, test
    if folds is not None:
        parts = kfold(scenes, folds, seed)
        if not 0 <= fold < folds:
            raise ValueError(f"fold index {fold} out of range for {folds} folds")
        test = parts[fold]
        train = [s for i, p in enumerate(parts) if i != fold for s in p]
        return train, test
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    order = np.random.default_rng(seed).permutation(len(scenes))
    n_train = min(max(1, round(train_fraction * len(scenes))), len(scenes) - 1)
    return [scenes[i] for i in order[:n_train]], [scenes[i] for i in order[n_train:]]
