import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lpn.anchors import FOREGROUND, match_anchors
from lpn.geometry import Box
from lpn.loss import (
    EPS,
    LossConfig,
    PredictionBatch,
    compute_loss,
    kernel_weights,
    loss_gradients,
    regression_targets,
    smooth_l1,
)
from helpers import loss_instance
from oracles import loss_oracle


def test_smooth_l1_examples():
    assert smooth_l1(0.0) == 0.0
    assert smooth_l1(0.5) == 0.125
    assert smooth_l1(3.0) == 2.5
    assert smooth_l1(-3.0) == 2.5
    np.testing.assert_array_equal(smooth_l1(np.array([-0.5, 1.0])), [0.125, 0.5])


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(gamma=-1)
    with pytest.raises(ValueError):
        LossConfig(lam=-0.1)


def test_misaligned_inputs_raise():
    with pytest.raises(ValueError):
        PredictionBatch(np.ones(3) / 2, np.zeros((2, 4)))
    anchors = np.array([[0, 0, 10, 10], [5, 5, 15, 15]], float)
    m = match_anchors(anchors, anchors[:1])
    with pytest.raises(ValueError, match="shape mismatch"):
        compute_loss(PredictionBatch([0.5], np.zeros((1, 4))), m, anchors[:1], anchors, LossConfig())


def test_single_foreground_hand_case():
    anchors = np.array([[0, 0, 16, 16]], float)
    m = match_anchors(anchors, anchors)
    assert m.labels.tolist() == [FOREGROUND]
    cfg = LossConfig()
    k = kernel_weights(m, anchors, anchors, cfg)
    assert k.tolist() == [4.0]
    br = compute_loss(PredictionBatch([0.5], np.zeros((1, 4))), m, anchors, anchors, cfg)
    assert br.total == pytest.approx(4 * math.log(2), rel=1e-15)
    assert (br.n_fg, br.n_bg, br.n_loc) == (1, 0, 1)


def test_perfect_predictor_goes_to_zero():
    rng = np.random.default_rng(0)
    pred, match, gts, anchors, cfg, k = loss_instance(rng)
    targets = regression_targets(match, gts, anchors)
    u = np.where(match.foreground, 1 - EPS, EPS)
    p = pred.p.copy()
    p[match.foreground] = targets
    br = compute_loss(PredictionBatch(u, p), match, gts, anchors, cfg)
    assert br.loc_term == 0.0
    assert br.total <= 4 * EPS * (1 + k.max())
    g = loss_gradients(PredictionBatch(u, p), match, gts, anchors, cfg)
    assert np.all(g.p == 0.0)


def test_empty_scene_has_only_background_term():
    anchors = np.array([[0, 0, 10, 10], [20, 20, 30, 30]], float)
    m = match_anchors(anchors, [])
    br = compute_loss(PredictionBatch([0.2, 0.4], np.zeros((2, 4))), m, [], anchors, LossConfig())
    assert br.fg_term == br.loc_term == 0.0
    assert br.bg_term == pytest.approx((-math.log(0.8) - math.log(0.6)) / 2)


def _oracle(pred, match, gts, anchors, cfg, k):
    return loss_oracle(
        pred.u.tolist(), pred.q.tolist(), pred.p.tolist(), match.labels.tolist(),
        match.matched_gt.tolist(), gts.tolist(), anchors.tolist(), k.tolist(),
        cfg.gamma, cfg.lam, cfg.eps,
    )


@pytest.mark.parametrize("seed", range(20))
def test_term_by_term_oracle(seed):
    rng = np.random.default_rng(seed)
    pred, match, gts, anchors, cfg, k = loss_instance(rng, tied=seed % 2 == 0)
    br = compute_loss(pred, match, gts, anchors, cfg)
    want = _oracle(pred, match, gts, anchors, cfg, k)
    for got, exp in zip((br.total, br.fg_term, br.bg_term, br.loc_term), want):
        assert got == pytest.approx(exp, rel=1e-12, abs=0)
    assert br.total == pytest.approx(br.fg_term + cfg.gamma * br.bg_term + cfg.lam * br.loc_term, rel=1e-15)
    assert br.n_loc == br.n_fg


def _fd_check(pred, match, gts, anchors, cfg, k, h=1e-5):
    """Largest relative error between analytic and central-difference gradients."""
    g = loss_gradients(pred, match, gts, anchors, cfg, k=k)
    f = lambda pr: compute_loss(pr, match, gts, anchors, cfg, k=k).total  # noqa: E731
    worst = 0.0

    def rel(a, n):
        scale = max(abs(a), abs(n))
        return 0.0 if scale == 0 else abs(a - n) / scale

    tied = pred.tied
    for i in range(len(pred)):
        if tied:
            up = PredictionBatch(pred.u + h * (np.arange(len(pred)) == i), pred.p)
            dn = PredictionBatch(pred.u - h * (np.arange(len(pred)) == i), pred.p)
            worst = max(worst, rel(g.wrt_shared_prob()[i], (f(up) - f(dn)) / (2 * h)))
        else:
            e = h * (np.arange(len(pred)) == i)
            worst = max(worst, rel(g.u[i], (f(PredictionBatch(pred.u + e, pred.p, pred.q)) - f(PredictionBatch(pred.u - e, pred.p, pred.q))) / (2 * h)))
            worst = max(worst, rel(g.q[i], (f(PredictionBatch(pred.u, pred.p, pred.q + e)) - f(PredictionBatch(pred.u, pred.p, pred.q - e))) / (2 * h)))
        for v in range(4):
            dp = np.zeros_like(pred.p)
            dp[i, v] = h
            num = (f(PredictionBatch(pred.u, pred.p + dp, None if tied else pred.q)) - f(PredictionBatch(pred.u, pred.p - dp, None if tied else pred.q))) / (2 * h)
            worst = max(worst, rel(g.p[i, v], num))
    return worst


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    inst = loss_instance(rng, tied=seed % 2 == 1)
    assert _fd_check(*inst) <= 1e-5


def test_gradient_formulas():
    rng = np.random.default_rng(7)
    pred, match, gts, anchors, cfg, k = loss_instance(rng)
    g = loss_gradients(pred, match, gts, anchors, cfg)
    fg, bg = match.foreground, match.background
    np.testing.assert_allclose(g.u[fg], -k[fg] / (fg.sum() * pred.u[fg]), rtol=1e-15)
    np.testing.assert_allclose(g.q[bg], cfg.gamma / (bg.sum() * (1 - pred.q[bg])), rtol=1e-15)
    assert np.all(g.u[~fg] == 0) and np.all(g.q[~bg] == 0) and np.all(g.p[~fg] == 0)


def test_gradient_zero_inside_clamp():
    rng = np.random.default_rng(8)
    pred, match, gts, anchors, cfg, k = loss_instance(rng)
    u = pred.u.copy()
    u[match.foreground] = 1e-9
    g = loss_gradients(PredictionBatch(u, pred.p, pred.q), match, gts, anchors, cfg)
    assert np.all(g.u[match.foreground] == 0.0)


@given(st.integers(0, 2**31), st.floats(0.1, 10))
def test_fg_term_linear_in_k(seed, scale):
    rng = np.random.default_rng(seed)
    pred, match, gts, anchors, cfg, k = loss_instance(rng)
    k2 = rng.uniform(0, 5, len(k))
    a = compute_loss(pred, match, gts, anchors, cfg, k=k).fg_term
    b = compute_loss(pred, match, gts, anchors, cfg, k=k2).fg_term
    both = compute_loss(pred, match, gts, anchors, cfg, k=scale * k + k2).fg_term
    assert both == pytest.approx(scale * a + b, rel=1e-12)


def test_doubling_k_doubles_that_gradient():
    rng = np.random.default_rng(9)
    pred, match, gts, anchors, cfg, k = loss_instance(rng)
    i = int(np.flatnonzero(match.foreground)[0])
    k2 = k.copy()
    k2[i] *= 2
    g1 = loss_gradients(pred, match, gts, anchors, cfg, k=k)
    g2 = loss_gradients(pred, match, gts, anchors, cfg, k=k2)
    assert g2.u[i] == 2 * g1.u[i]
    others = np.arange(len(k)) != i
    np.testing.assert_array_equal(g2.u[others], g1.u[others])


@pytest.mark.parametrize("seed", range(5))
def test_kernel_off_equals_unit_weights(seed):
    rng = np.random.default_rng(seed)
    pred, match, gts, anchors, cfg, k = loss_instance(rng)
    off = LossConfig(kernel=None)
    assert np.all(kernel_weights(match, gts, anchors, off) == 1.0)
    a = compute_loss(pred, match, gts, anchors, off)
    b = compute_loss(pred, match, gts, anchors, cfg, k=np.ones(len(k)))
    assert a == b


@given(st.integers(0, 2**31))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    pred, match, gts, anchors, cfg, k = loss_instance(rng)
    perm = rng.permutation(len(anchors))
    m2 = match_anchors(anchors[perm], gts)
    p2 = PredictionBatch(pred.u[perm], pred.p[perm], pred.q[perm])
    a = compute_loss(pred, match, gts, anchors, cfg)
    b = compute_loss(p2, m2, gts, anchors[perm], cfg)
    assert b.total == pytest.approx(a.total, rel=1e-12)
