"""Random problem instances shared by the suites."""

import numpy as np

from lpn.anchors import match_anchors
from lpn.geometry import as_box_array
from lpn.kernel import SpatialKernelConfig
from lpn.loss import LossConfig, PredictionBatch, kernel_weights, regression_targets

SMALL_KERNEL = SpatialKernelConfig(sigma_x=12.0, sigma_y=5.0, window=60.0)


def random_boxes(rng, n, lo=0, hi=60, smin=4, smax=24):
    xy = rng.uniform(lo, hi, (n, 2))
    wh = rng.uniform(smin, smax, (n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def loss_instance(rng, n_anchors=20, n_gts=4, tied=False, cfg=None):
    """Anchors built around the gts so every instance has fg and bg anchors."""
    gts = random_boxes(rng, n_gts)
    near = gts[rng.integers(0, n_gts, n_anchors // 2)] + rng.normal(0, 2.0, (n_anchors // 2, 4))
    near[:, 2:] = np.maximum(near[:, 2:], near[:, :2] + 1)
    far = random_boxes(rng, n_anchors - len(near), lo=100, hi=200)
    anchors = np.concatenate([near, far])
    cfg = cfg or LossConfig(kernel=SMALL_KERNEL)
    match = match_anchors(anchors, gts, cfg.pos_thresh, cfg.neg_thresh)
    targets = regression_targets(match, gts, anchors)
    # offsets kept away from the smooth-L1 kink at |d| = 1 and from d = 0
    p = rng.normal(0, 1, (n_anchors, 4))
    fg = np.flatnonzero(match.foreground)
    shape = (len(fg), 4)
    mag = np.where(rng.random(shape) < 0.5, rng.uniform(0.05, 0.95, shape), rng.uniform(1.05, 3.0, shape))
    p[fg] = targets + rng.choice([-1, 1], size=(len(fg), 4)) * mag
    u = rng.uniform(0.05, 0.95, n_anchors)
    q = None if tied else rng.uniform(0.05, 0.95, n_anchors)
    pred = PredictionBatch(u, p, q)
    k = kernel_weights(match, gts, anchors, cfg)
    return pred, match, as_box_array(gts), anchors, cfg, k
