"""Run configuration: a YAML document validated against a strict schema.

Unknown keys are rejected at every level, so a typo such as ``sigam_x``
fails loudly instead of silently running with the default.
"""

from __future__ import annotations

import math
import zlib
from pathlib import Path

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .anchors import DEFAULT_SIZES
from .data_io import LotSpec, SceneParams
from .detection import DetectionParams
from .kernel import SpatialKernelConfig, default_orientations
from .loss import EPS, LossConfig
from .metrics import DEFAULT_IOU_GRID
from .scorer import TrainOptions


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AnchorSection(_Strict):
    stride: int = Field(8, ge=1)
    sizes: tuple[tuple[float, float], ...] = DEFAULT_SIZES  # (w, h) pairs
    aspect_ratios: tuple[float, ...] = (1.0,)
    exclude_cross_boundary: bool = False

    def generator_kwargs(self) -> dict:
        return {"stride": self.stride, "sizes": [list(s) for s in self.sizes], "aspect_ratios": list(self.aspect_ratios)}


class KernelSection(_Strict):
    alpha: float = Field(1.0, ge=0)
    sigma_x: float = Field(42.5, gt=0)
    sigma_y: float = Field(10.0, gt=0)
    n_orientations: int = Field(4, ge=1)
    window: float = Field(255.0, gt=0)
    normalize: bool = False

    def build(self) -> SpatialKernelConfig:
        return SpatialKernelConfig(
            self.alpha,
            self.sigma_x,
            self.sigma_y,
            default_orientations(self.n_orientations),
            self.window,
            self.normalize,
        )


class LossSection(_Strict):
    gamma: float = Field(1.0, ge=0)
    lam: float = Field(1.0, ge=0)
    pos_thresh: float = Field(0.7, ge=0, le=1)
    neg_thresh: float = Field(0.3, ge=0, le=1)
    eps: float = Field(EPS, gt=0, lt=0.5)

    @model_validator(mode="after")
    def _ordered(self):
        if self.neg_thresh > self.pos_thresh:
            raise ValueError("neg_thresh must not exceed pos_thresh")
        return self


class TrainingSection(_Strict):
    learning_rate: float = Field(1.0, gt=0)
    epochs: int = Field(200, ge=0)
    momentum: float = Field(0.0, ge=0, lt=1)
    grid_size: int = Field(8, ge=1)
    context: float = Field(1.0, gt=0)
    init_scale: float = Field(0.01, ge=0)


class DetectionSection(_Strict):
    score_threshold: float = Field(0.5, ge=0, le=1)
    nms_iou: float = Field(0.3, ge=0, le=1)
    top_n: int = Field(300, ge=1)

    def build(self) -> DetectionParams:
        return DetectionParams(self.score_threshold, self.nms_iou, self.top_n)


class MetricsSection(_Strict):
    iou_grid: tuple[float, ...] = DEFAULT_IOU_GRID
    budgets: tuple[int, ...] = (100, 300, 500, 700, 1000)

    @field_validator("iou_grid")
    @classmethod
    def _grid(cls, v):
        if not v or any(not 0.5 <= t <= 1.0 for t in v):
            raise ValueError("iou_grid must be non-empty with values in [0.5, 1]")
        return v

    @field_validator("budgets")
    @classmethod
    def _budgets(cls, v):
        if not v or any(b < 1 for b in v):
            raise ValueError("budgets must be non-empty positive integers")
        return v


class LotSection(_Strict):
    name: str
    orientation: float = Field(0.0, ge=0, lt=math.pi)


class SceneSection(_Strict):
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
    car_intensity: tuple[float, float] = (0.6, 1.0)
    background: float = 0.2
    clutter: int = 0
    occupancy_range: tuple[float, float] | None = (0.3, 0.95)
    lots: tuple[LotSection, ...] = (
        LotSection(name="A", orientation=0.0),
        LotSection(name="B", orientation=math.pi / 2),
    )

    @model_validator(mode="after")
    def _check(self):
        self.params().validate()
        if self.occupancy_range is not None:
            lo, hi = self.occupancy_range
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError("occupancy_range must satisfy 0 <= lo <= hi <= 1")
        if not self.lots:
            raise ValueError("need at least one lot")
        return self

    def params(self) -> SceneParams:
        fields = self.model_dump(exclude={"occupancy_range", "lots"})
        return SceneParams(**fields)

    def lot_specs(self) -> list[LotSpec]:
        return [LotSpec(l.name, l.orientation) for l in self.lots]


class RunConfig(_Strict):
    seed: int = Field(0, ge=0)
    kernel_enabled: bool = True
    anchors: AnchorSection = AnchorSection()
    kernel: KernelSection = KernelSection()
    loss: LossSection = LossSection()
    training: TrainingSection = TrainingSection()
    detection: DetectionSection = DetectionSection()
    metrics: MetricsSection = MetricsSection()
    scenes: SceneSection = SceneSection()
    manifest: str | None = None
    output: str = "out"

    def loss_config(self, kernel: bool | None = None) -> LossConfig:
        on = self.kernel_enabled if kernel is None else kernel
        return LossConfig(
            self.loss.gamma,
            self.loss.lam,
            self.kernel.build() if on else None,
            self.loss.pos_thresh,
            self.loss.neg_thresh,
            self.loss.eps,
        )

    def train_options(self, seed: int) -> TrainOptions:
        return TrainOptions(seed=seed, **self.training.model_dump())

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


def subseed(root: int, stream: str) -> int:
    """Deterministic 32-bit seed for one named subsystem of a run."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(stream.encode())])
    return int(ss.generate_state(1)[0])


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a YAML config (or defaults when ``path`` is None) and apply overrides."""
    doc = {}
    if path is not None:
        text = Path(path).read_text()
        doc = yaml.safe_load(text) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: top level must be a mapping")
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.model_validate(doc)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.resolved(), sort_keys=False)
