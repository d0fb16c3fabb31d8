"""Spatially reweighted multi-task proposal loss and its analytic gradient."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .anchors import AnchorGrid, MatchResult
from .geometry import as_box_array, encode_array, to_center
from .kernel import SpatialKernelConfig, pattern_scores

EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 1.0
    lam: float = 1.0
    kernel: SpatialKernelConfig | None = field(default_factory=SpatialKernelConfig)
    pos_thresh: float = 0.7
    neg_thresh: float = 0.3
    eps: float = EPS

    def __post_init__(self):
        if self.gamma < 0 or self.lam < 0:
            raise ValueError(f"gamma and lam must be >= 0, got {self.gamma}, {self.lam}")


@dataclass
class PredictionBatch:
    """Per-anchor outputs: fg probability ``u``, bg-side probability ``q``, offsets ``p``.

    ``q`` defaults to ``u`` (one shared logistic output per anchor).
    """

    u: np.ndarray
    p: np.ndarray
    q: np.ndarray | None = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64).ravel()
        self.p = np.asarray(self.p, dtype=np.float64).reshape(-1, 4)
        self.q = self.u if self.q is None else np.asarray(self.q, dtype=np.float64).ravel()
        if not (len(self.u) == len(self.q) == len(self.p)):
            raise ValueError(
                f"prediction arrays misaligned: u={len(self.u)} q={len(self.q)} p={len(self.p)}"
            )

    @property
    def tied(self) -> bool:
        return self.q is self.u

    def __len__(self) -> int:
        return len(self.u)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    fg_term: float
    bg_term: float
    loc_term: float
    n_fg: int
    n_bg: int
    n_loc: int


@dataclass
class LossGradients:
    u: np.ndarray
    q: np.ndarray
    p: np.ndarray

    def wrt_shared_prob(self) -> np.ndarray:
        """Total derivative w.r.t. the probability when ``q`` is tied to ``u``."""
        return self.u + self.q


def smooth_l1(x):
    ax = np.abs(x)
    out = np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)
    return float(out) if np.ndim(out) == 0 else out


def regression_targets(match: MatchResult, gts, anchors: np.ndarray) -> np.ndarray:
    """Encoded offsets of each foreground anchor's matched gt, shape (n_fg, 4)."""
    fg = match.foreground
    if not fg.any():
        return np.zeros((0, 4))
    gts = as_box_array(gts)
    return encode_array(gts[match.matched_gt[fg]], anchors[fg])


def kernel_weights(match: MatchResult, gts, grid, cfg: LossConfig) -> np.ndarray:
    """K for every anchor; all ones when the kernel is disabled."""
    anchors = grid.boxes if isinstance(grid, AnchorGrid) else as_box_array(grid)
    if cfg.kernel is None:
        return np.ones(len(anchors))
    gts = as_box_array(gts)
    centers = to_center(anchors)[:, :2]
    gt_centers = to_center(gts)[:, :2]
    return pattern_scores(centers, match.labels, gt_centers, cfg.kernel)


def _check(pred, match, grid):
    anchors = grid.boxes if isinstance(grid, AnchorGrid) else as_box_array(grid)
    if len(pred) != len(anchors) or len(match.labels) != len(anchors):
        raise ValueError(
            f"shape mismatch: {len(pred)} predictions, {len(match.labels)} labels, "
            f"{len(anchors)} anchors"
        )
    return anchors


def compute_loss(
    pred: PredictionBatch,
    match: MatchResult,
    gts,
    grid,
    cfg: LossConfig,
    k: np.ndarray | None = None,
    targets: np.ndarray | None = None,
) -> LossBreakdown:
    """Evaluate the weighted loss for one image.

    ``k`` and ``targets`` may be passed in when precomputed; they depend
    only on ground truth.
    """
    anchors = _check(pred, match, grid)
    if k is None:
        k = kernel_weights(match, gts, anchors, cfg)
    if targets is None:
        targets = regression_targets(match, gts, anchors)

    fg = match.foreground
    bg = match.background
    n_fg, n_bg = int(fg.sum()), int(bg.sum())
    u = np.clip(pred.u, cfg.eps, 1.0 - cfg.eps)
    q = np.clip(pred.q, cfg.eps, 1.0 - cfg.eps)

    fg_term = loc_term = bg_term = 0.0
    if n_fg:
        fg_term = float(np.sum(k[fg] * -np.log(u[fg]))) / n_fg
        loc_term = float(np.sum(smooth_l1(pred.p[fg] - targets))) / n_fg
    if n_bg:
        bg_term = float(np.sum(-np.log(1.0 - q[bg]))) / n_bg
    total = fg_term + cfg.gamma * bg_term + cfg.lam * loc_term
    return LossBreakdown(total, fg_term, bg_term, loc_term, n_fg, n_bg, n_fg)


def loss_gradients(
    pred: PredictionBatch,
    match: MatchResult,
    gts,
    grid,
    cfg: LossConfig,
    k: np.ndarray | None = None,
    targets: np.ndarray | None = None,
) -> LossGradients:
    """Gradient of ``compute_loss(...).total`` w.r.t. ``u``, ``q`` and ``p``.

    Inside the clamp region (``u < eps`` or ``u > 1 - eps``) the log terms
    are flat, so their derivative is zero there.
    """
    anchors = _check(pred, match, grid)
    if k is None:
        k = kernel_weights(match, gts, anchors, cfg)
    if targets is None:
        targets = regression_targets(match, gts, anchors)

    fg = match.foreground
    bg = match.background
    n_fg, n_bg = int(fg.sum()), int(bg.sum())
    gu = np.zeros(len(pred))
    gq = np.zeros(len(pred))
    gp = np.zeros((len(pred), 4))
    if n_fg:
        u = pred.u[fg]
        live = (u >= cfg.eps) & (u <= 1.0 - cfg.eps)
        gu[fg] = np.where(live, -k[fg] / (n_fg * np.where(live, u, 1.0)), 0.0)
        gp[fg] = cfg.lam / n_fg * np.clip(pred.p[fg] - targets, -1.0, 1.0)
    if n_bg:
        q = pred.q[bg]
        live = (q >= cfg.eps) & (q <= 1.0 - cfg.eps)
        gq[bg] = np.where(live, cfg.gamma / (n_bg * (1.0 - np.where(live, q, 0.0))), 0.0)
    return LossGradients(gu, gq, gp)
