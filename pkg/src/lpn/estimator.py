"""scikit-learn style wrapper around the scorer, proposals and counting."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_scenes
from .detection import DetectionParams, count_objects, rank_proposals
from .experiment import GridCache
from .kernel import SpatialKernelConfig, default_orientations
from .loss import LossConfig
from .metrics import DEFAULT_IOU_GRID, average_recall
from .scorer import TrainOptions, train_scorer


class LayoutProposalNetwork(BaseEstimator):
    """Proposal scorer trained with layout-weighted loss; counts by detection.

    ``X`` is a list of scenes: objects with ``.grid`` (2-D intensity image)
    and ``.boxes`` (ground truth, N x 4), or bare images with the box lists
    passed separately as ``y``.

    ``predict`` returns one count per scene; ``propose`` the ranked
    proposals; ``score`` the mean AR of the top ``top_n`` proposals.
    """

    def __init__(
        self,
        kernel=True,
        alpha=1.0,
        sigma_x=42.5,
        sigma_y=10.0,
        n_orientations=4,
        window=255.0,
        gamma=1.0,
        lam=1.0,
        learning_rate=1.0,
        epochs=200,
        momentum=0.0,
        grid_size=8,
        stride=8,
        top_n=300,
        score_threshold=0.5,
        nms_iou=0.3,
        random_state=0,
    ):
        self.kernel = kernel
        self.alpha = alpha
        self.sigma_x = sigma_x
        self.sigma_y = sigma_y
        self.n_orientations = n_orientations
        self.window = window
        self.gamma = gamma
        self.lam = lam
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.momentum = momentum
        self.grid_size = grid_size
        self.stride = stride
        self.top_n = top_n
        self.score_threshold = score_threshold
        self.nms_iou = nms_iou
        self.random_state = random_state

    def _loss_config(self) -> LossConfig:
        kern = None
        if self.kernel:
            kern = SpatialKernelConfig(
                self.alpha,
                self.sigma_x,
                self.sigma_y,
                default_orientations(self.n_orientations),
                self.window,
            )
        return LossConfig(self.gamma, self.lam, kern)

    def _detection(self) -> DetectionParams:
        return DetectionParams(self.score_threshold, self.nms_iou, self.top_n)

    def fit(self, X, y=None):
        scenes = check_scenes(X, y)
        if self.random_state is not None and not isinstance(self.random_state, (int, np.integer)):
            raise ValueError("random_state must be an int or None")
        self._detection()  # validate early
        opt = TrainOptions(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            momentum=self.momentum,
            grid_size=self.grid_size,
            seed=0 if self.random_state is None else int(self.random_state),
        )
        anchors = {"stride": self.stride}
        self.model_, self.history_ = train_scorer(scenes, self._loss_config(), opt, anchors)
        self.grids_ = GridCache(anchors)
        self.n_features_in_ = self.grid_size**2 + 1
        return self

    def _predictions(self, scene):
        grid = self.grids_(scene.image_w, scene.image_h)
        return grid, self.model_.predict(self.model_.features(scene.grid, grid.boxes))

    def predict_proba(self, X) -> list[np.ndarray]:
        """Per-anchor foreground probability for each scene."""
        check_is_fitted(self, "model_")
        return [self._predictions(s)[1].u for s in check_scenes(X, require_boxes=False)]

    def propose(self, X, top_n=None) -> list:
        check_is_fitted(self, "model_")
        n = self.top_n if top_n is None else top_n
        out = []
        for s in check_scenes(X, require_boxes=False):
            grid, pred = self._predictions(s)
            out.append(rank_proposals(pred, grid, min(n, len(grid))))
        return out

    def predict(self, X) -> np.ndarray:
        """Object count per scene."""
        params = self._detection()
        return np.array([count_objects(p, params)[0] for p in self.propose(X)], dtype=np.int64)

    def score(self, X, y=None) -> float:
        """Mean average recall of the top ``top_n`` proposals."""
        scenes = check_scenes(X, y)
        props = self.propose([s.grid for s in scenes])
        ars = [average_recall(p, s.boxes, DEFAULT_IOU_GRID).ar for p, s in zip(props, scenes)]
        return float(np.mean(ars))
