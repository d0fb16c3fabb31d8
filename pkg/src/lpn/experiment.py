"""Dataset construction, proposal/counting evaluation and the kernel ablation."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .anchors import AnchorGrid, generate_anchors
from .config import RunConfig, subseed
from .detection import DetectionParams, Proposal, count_objects, rank_proposals
from .geometry import Box, as_box_array, iou_matrix
from .loss import PredictionBatch
from .metrics import DEFAULT_IOU_GRID, average_recall, counting_errors
from .data_io import generate_scenes
from .scorer import ScorerModel, train_scorer

logger = logging.getLogger(__name__)


def pmap(fn, items, jobs: int = 1) -> list:
    """Ordered map; results do not depend on ``jobs``."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def make_scenes(cfg: RunConfig, n: int, seed: int, prefix: str):
    sc = cfg.scenes
    return generate_scenes(
        sc.params(), n, subseed(seed, f"scenes:{prefix}"), sc.lot_specs(), sc.occupancy_range, prefix
    )


class GridCache:
    """One anchor grid per image size."""

    def __init__(self, anchor_kwargs: dict):
        self.kwargs = dict(anchor_kwargs)
        self._grids: dict[tuple[int, int], AnchorGrid] = {}

    def __call__(self, w: int, h: int) -> AnchorGrid:
        key = (int(w), int(h))
        if key not in self._grids:
            self._grids[key] = generate_anchors(key[0], key[1], **self.kwargs)
        return self._grids[key]


def oracle_predictions(grid: AnchorGrid, gts) -> PredictionBatch:
    """Score each anchor by its best IoU with ground truth, with zero offsets."""
    gts = as_box_array(gts)
    if len(gts) == 0:
        u = np.zeros(len(grid))
    else:
        u = iou_matrix(grid.boxes, gts).max(axis=1)
    return PredictionBatch(u, np.zeros((len(grid), 4)))


def clamp_budgets(budgets, n_anchors: int) -> list[int]:
    out = []
    for b in budgets:
        if b > n_anchors:
            logger.warning("budget %d exceeds the %d anchors; clamped", b, n_anchors)
            b = n_anchors
        out.append(int(b))
    return out


def scene_ar(pred: PredictionBatch, grid: AnchorGrid, gts, budgets, thresholds) -> list[float]:
    """AR of the top-``b`` proposals for each budget ``b``."""
    budgets = clamp_budgets(budgets, len(grid))
    props = rank_proposals(pred, grid, max(budgets))
    boxes = np.array([p.box.as_tuple() for p in props]).reshape(-1, 4)
    return [average_recall(boxes[:b], gts, thresholds).ar for b in budgets]


@dataclass(frozen=True)
class ProposalTable:
    budgets: tuple[int, ...]
    rows: dict  # method -> tuple of mean AR per budget
    n_scenes: int

    def to_csv(self) -> str:
        lines = ["method," + ",".join(str(b) for b in self.budgets)]
        for name, vals in self.rows.items():
            lines.append(name + "," + ",".join(f"{v:.6f}" for v in vals))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "budgets": list(self.budgets),
            "n_scenes": self.n_scenes,
            "ar": {k: list(v) for k, v in self.rows.items()},
        }


def evaluate_proposals(
    model: ScorerModel | None,
    scenes,
    grids: GridCache,
    budgets=(100, 300, 500, 700, 1000),
    thresholds=DEFAULT_IOU_GRID,
    jobs: int = 1,
    ceiling: bool = True,
) -> ProposalTable:
    """Mean AR per budget for ``model`` and, optionally, the max-IoU oracle."""
    scenes = list(scenes)
    budgets = tuple(int(b) for b in budgets)

    def one(scene):
        grid = grids(scene.image_w, scene.image_h)
        out = {}
        if model is not None:
            pred = model.predict(model.features(scene.grid, grid.boxes))
            out["model"] = scene_ar(pred, grid, scene.boxes, budgets, thresholds)
        if ceiling:
            out["ar_ceiling"] = scene_ar(
                oracle_predictions(grid, scene.boxes), grid, scene.boxes, budgets, thresholds
            )
        return out

    per_scene = pmap(one, scenes, jobs)
    names = (["model"] if model is not None else []) + (["ar_ceiling"] if ceiling else [])
    rows = {}
    for name in names:
        if per_scene:
            rows[name] = tuple(float(x) for x in np.mean([r[name] for r in per_scene], axis=0))
        else:
            rows[name] = tuple(float("nan") for _ in budgets)
    return ProposalTable(budgets, rows, len(scenes))


def perfect_proposals(gts) -> list[Proposal]:
    return [Proposal(Box(*map(float, b)), 1.0, i) for i, b in enumerate(as_box_array(gts))]


def count_scenes(
    model: ScorerModel | None,
    scenes,
    grids: GridCache,
    params: DetectionParams,
    jobs: int = 1,
):
    """Count every scene by detection; ``model=None`` uses a perfect detector.

    Returns ``(report, detections)`` with detections listed per scene.
    """
    scenes = list(scenes)

    def one(scene):
        if model is None:
            props = perfect_proposals(scene.boxes)
        else:
            grid = grids(scene.image_w, scene.image_h)
            (top_n,) = clamp_budgets([params.top_n], len(grid))
            pred = model.predict(model.features(scene.grid, grid.boxes))
            props = rank_proposals(pred, grid, top_n)
        return count_objects(props, params)

    results = pmap(one, scenes, jobs)
    pairs = [(len(s.boxes), f) for s, (f, _) in zip(scenes, results)]
    report = counting_errors(pairs, [s.scene_id for s in scenes])
    return report, [d for _, d in results]


@dataclass(frozen=True)
class AblationPair:
    seed: int
    ar_on: float
    ar_off: float

    @property
    def gain(self) -> float:
        return self.ar_on - self.ar_off


def run_ablation(
    cfg: RunConfig,
    seeds,
    n_train: int = 200,
    n_test: int = 50,
    budget: int = 300,
    jobs: int = 1,
) -> list[AblationPair]:
    """Train kernel-on and kernel-off scorers on identical data and seeds.

    Each seed draws its own training and test scenes; both arms then share
    them, along with the weight-initialization seed.
    """
    grids = GridCache(cfg.anchors.generator_kwargs())
    out = []
    for seed in seeds:
        train = make_scenes(cfg, n_train, seed, "train")
        test = make_scenes(cfg, n_test, seed, "test")
        opt = cfg.train_options(subseed(seed, "train"))
        ar = {}
        for on in (True, False):
            model, _ = train_scorer(
                train,
                cfg.loss_config(kernel=on),
                opt,
                cfg.anchors.generator_kwargs(),
                cfg.anchors.exclude_cross_boundary,
            )
            table = evaluate_proposals(
                model, test, grids, (budget,), cfg.metrics.iou_grid, jobs, ceiling=False
            )
            ar[on] = table.rows["model"][0]
        out.append(AblationPair(int(seed), ar[True], ar[False]))
    return out
