import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lpn.geometry import Box
from lpn.metrics import DEFAULT_IOU_GRID, average_recall, counting_errors, recall_at_iou
from helpers import random_boxes
from oracles import greedy_recall_oracle, iou_scalar, optimal_recall_oracle


def test_grid():
    assert DEFAULT_IOU_GRID == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


def test_recall_examples():
    gts = random_boxes(np.random.default_rng(0), 5)
    for t in DEFAULT_IOU_GRID:
        assert recall_at_iou(gts.copy(), gts, t) == 1.0
    assert recall_at_iou(np.zeros((0, 4)), gts, 0.5) == 0.0
    assert recall_at_iou(gts, np.zeros((0, 4)), 0.5) == 1.0
    assert average_recall(gts.copy(), gts).ar == 1.0


def test_ar_at_iou_point_six():
    # shift each gt so the proposal overlaps it at IoU exactly 0.6: 10x10 box shifted by 2.5
    gts = np.array([[0, 0, 10, 10], [50, 50, 60, 60]], float)
    props = gts + np.array([2.5, 0, 2.5, 0])
    assert iou_scalar(props[0], gts[0]) == pytest.approx(0.6)
    curve = average_recall(props, gts)
    assert curve.recall_at == (1, 1, 1, 0, 0, 0, 0, 0, 0, 0)
    assert curve.ar == pytest.approx(0.3)


def test_crafted_instance_greedy_equals_optimal():
    gts = [[0, 0, 10, 10], [20, 0, 30, 10], [40, 0, 50, 10]]
    props = [[1, 0, 11, 10], [21, 1, 31, 11], [0, 20, 10, 30], [39, 0, 49, 10], [2, 2, 12, 12]]
    for t in (0.5, 0.7, 0.8, 0.9):
        assert recall_at_iou(props, gts, t) == optimal_recall_oracle(props, gts, t)


def test_greedy_can_differ_from_optimal():
    # the first proposal takes the gt the second one needed; the other gt is left uncovered
    gts = [[0, 0, 10, 10], [4, 0, 14, 10]]
    props = [[2.2, 0, 12.2, 10], [4, 0, 14, 10]]
    assert recall_at_iou(props, gts, 0.5) == 0.5
    assert optimal_recall_oracle(props, gts, 0.5) == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_recall_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    gts = random_boxes(rng, rng.integers(0, 8))
    props = random_boxes(rng, rng.integers(0, 15))
    for t in (0.5, 0.7, 0.9):
        assert recall_at_iou(props, gts, t) == greedy_recall_oracle(props.tolist(), gts.tolist(), t)


@given(st.integers(0, 2**31))
def test_recall_properties(seed):
    rng = np.random.default_rng(seed)
    gts = random_boxes(rng, 6)
    props = random_boxes(rng, 10)
    curve = average_recall(props, gts)
    assert all(a >= b for a, b in zip(curve.recall_at, curve.recall_at[1:]))
    assert curve.ar == pytest.approx(np.mean(curve.recall_at))
    more = np.concatenate([props, random_boxes(rng, 1)])
    for t in DEFAULT_IOU_GRID:
        assert recall_at_iou(more, gts, t) >= recall_at_iou(props, gts, t)
    assert average_recall(props, gts, [0.5]).ar == recall_at_iou(props, gts, 0.5)


def test_threshold_grid_validation():
    with pytest.raises(ValueError):
        average_recall([], [], [])
    with pytest.raises(ValueError):
        average_recall([], [], [0.3])


def test_accepts_proposal_objects():
    from lpn.detection import Proposal

    props = [Proposal(Box(0, 0, 10, 10), 0.9)]
    assert recall_at_iou(props, [[0, 0, 10, 10]], 0.9) == 1.0


def test_counting_examples():
    r = counting_errors([(10, 12), (10, 6)])
    assert r.mae == 3.0
    assert r.rmse == pytest.approx(math.sqrt(10), rel=1e-15)
    assert counting_errors([(5, 5), (7, 7)]).rmse == 0.0
    one = counting_errors([(4, 9)])
    assert one.mae == one.rmse == 5.0
    with pytest.raises(ValueError):
        counting_errors([])
    d = counting_errors([(1, 2)], ["a"]).to_dict()
    assert d["scenes"] == [{"scene_id": "a", "y": 1, "f": 2}]


@given(st.lists(st.tuples(st.integers(0, 200), st.integers(0, 200)), min_size=1, max_size=30))
def test_mae_never_exceeds_rmse(pairs):
    r = counting_errors(pairs)
    assert 0 <= r.mae <= r.rmse + 1e-12
    errs = {abs(f - y) for y, f in pairs}
    if len(errs) == 1:
        assert r.mae == pytest.approx(r.rmse)
