"""Per-anchor affine scorer and its gradient-descent trainer."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .anchors import AnchorGrid, MatchResult, generate_anchors, match_anchors
from .kernel import SpatialKernelConfig
from .loss import LossConfig, PredictionBatch, kernel_weights, regression_targets

logger = logging.getLogger(__name__)

MODEL_FORMAT = "lpn-scorer"
MODEL_VERSION = 1


class DivergenceError(ArithmeticError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at epoch {epoch}")
        self.epoch = epoch


def anchor_features(
    image: np.ndarray, anchors: np.ndarray, grid_size: int = 8, context: float = 1.0
) -> np.ndarray:
    """Mean intensity of a ``grid_size`` x ``grid_size`` cell grid over each anchor.

    ``context`` scales the sampled window about the anchor center (1 = the
    anchor itself). Returns (N, grid_size**2 + 1) float32 with a trailing
    bias column of ones. Pixels outside the image count as zero intensity.
    """
    image = np.asarray(image, dtype=np.float64)
    if context != 1.0:
        c = (anchors[:, :2] + anchors[:, 2:]) / 2
        half = (anchors[:, 2:] - anchors[:, :2]) * (context / 2)
        anchors = np.concatenate([c - half, c + half], axis=1)
    h, w = image.shape
    overhang = max(
        0.0,
        -anchors[:, 0].min(),
        -anchors[:, 1].min(),
        anchors[:, 2].max() - w,
        anchors[:, 3].max() - h,
    )
    pad = int(math.ceil(overhang)) + 1
    padded = np.pad(image, pad)
    sat = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1))
    sat[1:, 1:] = padded.cumsum(0).cumsum(1)

    frac = np.arange(grid_size + 1) / grid_size
    xs = anchors[:, 0:1] + (anchors[:, 2:3] - anchors[:, 0:1]) * frac + pad
    ys = anchors[:, 1:2] + (anchors[:, 3:4] - anchors[:, 1:2]) * frac + pad
    xs = np.clip(np.rint(xs), 0, padded.shape[1]).astype(np.int64)
    ys = np.clip(np.rint(ys), 0, padded.shape[0]).astype(np.int64)

    y0, y1 = ys[:, :-1, None], ys[:, 1:, None]
    x0, x1 = xs[:, None, :-1], xs[:, None, 1:]
    sums = sat[y1, x1] - sat[y0, x1] - sat[y1, x0] + sat[y0, x0]
    area = np.maximum((y1 - y0) * (x1 - x0), 1)
    feats = (sums / area).reshape(len(anchors), grid_size * grid_size)
    out = np.ones((len(anchors), grid_size * grid_size + 1), dtype=np.float32)
    out[:, :-1] = feats
    return out


@dataclass
class ScorerModel:
    """Affine map from anchor features to one logit and four offsets.

    ``weights`` has shape (5, grid_size**2 + 1), bias in the last column;
    row 0 is the objectness logit, rows 1..4 regress (tx, ty, tw, th).
    """

    grid_size: int
    weights: np.ndarray
    kernel: SpatialKernelConfig | None = None
    anchors: dict = field(default_factory=dict)
    context: float = 1.0

    @property
    def n_params(self) -> int:
        return self.weights.size

    def features(self, image: np.ndarray, anchors: np.ndarray) -> np.ndarray:
        return anchor_features(image, anchors, self.grid_size, self.context)

    def forward(self, features: np.ndarray):
        z = np.asarray(features, dtype=np.float64) @ self.weights.T
        return z[:, 0], z[:, 1:]

    def predict(self, features: np.ndarray) -> PredictionBatch:
        logit, offsets = self.forward(features)
        return PredictionBatch(expit(logit), offsets)

    def to_json(self) -> str:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "grid_size": self.grid_size,
            "context": self.context,
            "n_params": self.n_params,
            "kernel": None if self.kernel is None else kernel_to_dict(self.kernel),
            "anchors": self.anchors,
            "weights": self.weights.tolist(),
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ScorerModel":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a scorer model document: format={doc.get('format')!r}")
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        g = int(doc["grid_size"])
        weights = np.asarray(doc["weights"], dtype=np.float64)
        if weights.shape != (5, g * g + 1):
            raise ValueError(f"weights shape {weights.shape} does not match grid size {g}")
        kernel = doc.get("kernel")
        if kernel is not None:
            kernel = SpatialKernelConfig(**{**kernel, "orientations": tuple(kernel["orientations"])})
        return cls(g, weights, kernel, doc.get("anchors", {}), float(doc.get("context", 1.0)))


def kernel_to_dict(cfg: SpatialKernelConfig) -> dict:
    d = asdict(cfg)
    d["orientations"] = list(cfg.orientations)
    return d


@dataclass
class TrainOptions:
    learning_rate: float = 1.0
    epochs: int = 200
    momentum: float = 0.0
    grid_size: int = 8
    context: float = 1.0
    init_scale: float = 0.01
    seed: int = 0


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    total: float
    fg: float
    bg: float
    loc: float


@dataclass
class PreparedScene:
    """What the trainer needs from a scene; none of it depends on the weights."""

    features: np.ndarray
    match: MatchResult
    k: np.ndarray
    targets: np.ndarray


def prepare_scene(
    scene,
    grid: AnchorGrid,
    cfg: LossConfig,
    grid_size: int,
    exclude_cross_boundary: bool = False,
    context: float = 1.0,
) -> PreparedScene:
    match = match_anchors(grid, scene.boxes, cfg.pos_thresh, cfg.neg_thresh, exclude_cross_boundary)
    k = kernel_weights(match, scene.boxes, grid, cfg)
    targets = regression_targets(match, scene.boxes, grid.boxes)
    feats = anchor_features(scene.grid, grid.boxes, grid_size, context)
    return PreparedScene(feats, match, k, targets)


class Whitener:
    """Affine change of feature coordinates ``x -> T (x - mean)`` plus a bias column.

    Gradient descent on weights over whitened features is preconditioned
    descent on the raw weights; :meth:`fold` maps trained weights back.
    """

    def __init__(self, feats: np.ndarray, weights: np.ndarray, floor: float = 1e-8):
        x = feats[:, :-1].astype(np.float64)
        wsum = weights.sum()
        self.mean = (weights @ x) / wsum
        xc = x - self.mean
        cov = (xc * weights[:, None]).T @ xc / wsum
        vals, vecs = np.linalg.eigh(cov)
        vals = np.maximum(vals, floor * max(vals[-1], floor))
        self.transform = (vecs / np.sqrt(vals)) @ vecs.T  # symmetric inverse square root

    def __call__(self, feats: np.ndarray) -> np.ndarray:
        out = np.ones((len(feats), feats.shape[1]))
        out[:, :-1] = (feats[:, :-1] - self.mean) @ self.transform.T
        return out

    def fold(self, w: np.ndarray) -> np.ndarray:
        """Raw-feature weights equivalent to whitened weights ``w`` (rows = outputs)."""
        w = np.atleast_2d(w)
        lin = w[:, :-1] @ self.transform
        bias = w[:, -1] - lin @ self.mean
        return np.concatenate([lin, bias[:, None]], axis=1)


class StackedObjective:
    """The training loss averaged over scenes, fused into flat arrays.

    A scene's loss is a sum of per-anchor terms scaled by that scene's
    normalizers, so the scene average is one weighted sum over all labelled
    anchors: fg rows carry ``K / (n * N_fg)``, bg rows ``1 / (n * N_bg)`` and
    regression rows ``1 / (n * N_fg)``; gamma and lam are applied on top.

    ``set_maps`` installs feature transforms for the score head and the
    offset head; without them the raw features are used.
    """

    def __init__(self, prepared, cfg: LossConfig):
        n = len(prepared)
        width = prepared[0].features.shape[1]
        feats, is_fg, coef, balanced = [], [], [], []
        loc_feats, loc_targets, loc_coef = [], [], []
        for ps in prepared:
            fg = ps.match.foreground
            bg = ps.match.background
            n_fg, n_bg = int(fg.sum()), int(bg.sum())
            if n_fg:
                feats.append(ps.features[fg])
                is_fg.append(np.ones(n_fg, dtype=bool))
                coef.append(ps.k[fg] / (n * n_fg))
                balanced.append(np.full(n_fg, 1.0 / (n * n_fg)))
                loc_feats.append(ps.features[fg])
                loc_targets.append(ps.targets)
                loc_coef.append(np.full(n_fg, 1.0 / (n * n_fg)))
            if n_bg:
                feats.append(ps.features[bg])
                is_fg.append(np.zeros(n_bg, dtype=bool))
                coef.append(np.full(n_bg, 1.0 / (n * n_bg)))
                balanced.append(np.full(n_bg, 1.0 / (n * n_bg)))

        def cat(parts, empty):
            return np.concatenate(parts) if parts else empty

        self.raw_feats = cat(feats, np.zeros((0, width), np.float32))
        self.is_fg = cat(is_fg, np.zeros(0, bool))
        self.coef = cat(coef, np.zeros(0))
        self.balanced = cat(balanced, np.zeros(0))
        self.raw_loc_feats = cat(loc_feats, np.zeros((0, width), np.float32))
        self.loc_targets = cat(loc_targets, np.zeros((0, 4)))
        self.loc_coef = cat(loc_coef, np.zeros(0))
        self.cfg = cfg
        self.set_maps()

    def set_maps(self, cls_map=None, loc_map=None):
        self.feats = (cls_map or _as_float64)(self.raw_feats)
        self.loc_feats = (loc_map or _as_float64)(self.raw_loc_feats)

    def __call__(self, weights, want_grad=True):
        """Return ``([total, fg, bg, loc], grad)``; terms are means over scenes."""
        eps, gamma, lam = self.cfg.eps, self.cfg.gamma, self.cfg.lam
        fg = self.is_fg
        u = expit(self.feats @ weights[0])
        uc = np.clip(u, eps, 1.0 - eps)
        nll = np.where(fg, -np.log(uc), -np.log(1.0 - uc))
        weighted = self.coef * nll
        fg_term = float(np.sum(weighted[fg]))
        bg_term = float(np.sum(weighted[~fg]))

        resid = self.loc_feats @ weights[1:].T - self.loc_targets
        ar = np.abs(resid)
        sl1 = np.where(ar < 1.0, 0.5 * resid * resid, ar - 0.5)
        loc_term = float(np.sum(self.loc_coef[:, None] * sl1))

        total = fg_term + gamma * bg_term + lam * loc_term
        terms = np.array([total, fg_term, bg_term, loc_term])
        if not want_grad:
            return terms, None

        # logit derivative of -log u is -(1 - u), of -log(1 - u) is u
        live = (u >= eps) & (u <= 1.0 - eps)
        dz = np.where(fg, -(1.0 - u), gamma * u) * self.coef * live
        grad = np.empty_like(weights)
        grad[0] = dz @ self.feats
        grad[1:] = (lam * self.loc_coef[:, None] * np.clip(resid, -1.0, 1.0)).T @ self.loc_feats
        return terms, grad


def _as_float64(x):
    return np.asarray(x, dtype=np.float64)


def train_scorer(
    scenes,
    cfg: LossConfig,
    opt: TrainOptions | None = None,
    anchor_params: dict | None = None,
    exclude_cross_boundary: bool = False,
):
    """Gradient descent on the loss averaged over ``scenes``.

    Both heads are optimized in whitened feature coordinates: the score head
    under the class-balanced anchor distribution (which ignores K, so kernel
    on/off runs share one parametrization), the offset head under the
    foreground distribution. The trained weights are folded back into a
    plain affine map of raw features.

    Returns ``(model, history)``; ``history`` holds the loss before each
    update and after the last one (``epochs + 1`` rows).
    """
    opt = opt or TrainOptions()
    scenes = list(scenes)
    if not scenes:
        raise ValueError("train_scorer needs at least one scene")
    anchor_params = dict(anchor_params or {})
    grids: dict[tuple[int, int], AnchorGrid] = {}
    prepared = []
    for s in scenes:
        key = (s.image_w, s.image_h)
        if key not in grids:
            grids[key] = generate_anchors(s.image_w, s.image_h, **anchor_params)
        prepared.append(
            prepare_scene(s, grids[key], cfg, opt.grid_size, exclude_cross_boundary, opt.context)
        )

    objective = StackedObjective(prepared, cfg)
    del prepared
    if len(objective.raw_feats) == 0:
        raise ValueError("no labelled anchors in the training scenes")
    cls_white = Whitener(objective.raw_feats, objective.balanced)
    if len(objective.raw_loc_feats):
        loc_white = Whitener(objective.raw_loc_feats, objective.loc_coef)
    else:
        loc_white = cls_white
    objective.set_maps(cls_white, loc_white)

    rng = np.random.default_rng(opt.seed)
    weights = rng.normal(0.0, opt.init_scale, (5, opt.grid_size**2 + 1))
    velocity = np.zeros_like(weights)
    history = []
    for epoch in range(opt.epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):  # caught by the finiteness check
            terms, grad = objective(weights, want_grad=epoch < opt.epochs)
        if not np.all(np.isfinite(terms)):
            raise DivergenceError(epoch, float(terms[0]))
        history.append(HistoryRow(epoch, *map(float, terms)))
        if epoch == opt.epochs:
            break
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(epoch, float("nan"))
        with np.errstate(over="ignore", invalid="ignore"):
            velocity = opt.momentum * velocity - opt.learning_rate * grad
            weights = weights + velocity
        if epoch % 50 == 0:
            logger.debug("epoch %d loss %.6f", epoch, terms[0])

    raw = np.concatenate([cls_white.fold(weights[0]), loc_white.fold(weights[1:])])
    return ScorerModel(opt.grid_size, raw, cfg.kernel, anchor_params, opt.context), history


def history_csv(history) -> str:
    lines = ["epoch,total,fg,bg,loc"]
    for h in history:
        lines.append(f"{h.epoch},{h.total!r},{h.fg!r},{h.bg!r},{h.loc!r}")
    return "\n".join(lines) + "\n"
