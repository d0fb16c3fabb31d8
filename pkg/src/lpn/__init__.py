"""Layout-weighted region proposals and counting by detection on synthetic parking lots."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .anchors import AnchorGrid, MatchResult, generate_anchors, match_anchors
from .detection import DetectionParams, Proposal, count_objects, nms, rank_proposals
from .estimator import LayoutProposalNetwork
from .geometry import Box, OffsetVector, decode_offsets, encode_offsets, iou
from .kernel import SpatialKernelConfig, pattern_score, pattern_scores
from .loss import LossConfig, PredictionBatch, compute_loss, loss_gradients, smooth_l1
from .metrics import average_recall, counting_errors, recall_at_iou
from .scorer import ScorerModel, TrainOptions, train_scorer

__all__ = [
    "AnchorGrid",
    "Box",
    "DetectionParams",
    "LayoutProposalNetwork",
    "LossConfig",
    "MatchResult",
    "OffsetVector",
    "PredictionBatch",
    "Proposal",
    "ScorerModel",
    "SpatialKernelConfig",
    "TrainOptions",
    "average_recall",
    "compute_loss",
    "count_objects",
    "counting_errors",
    "decode_offsets",
    "encode_offsets",
    "generate_anchors",
    "iou",
    "loss_gradients",
    "match_anchors",
    "nms",
    "pattern_score",
    "pattern_scores",
    "rank_proposals",
    "recall_at_iou",
    "smooth_l1",
    "train_scorer",
]
