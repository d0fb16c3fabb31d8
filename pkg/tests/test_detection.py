import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lpn.anchors import generate_anchors
from lpn.detection import (
    DetectionParams,
    Proposal,
    count_objects,
    detections_csv,
    nms,
    rank_proposals,
)
from lpn.geometry import Box, iou, iou_matrix
from lpn.loss import PredictionBatch
from helpers import random_boxes
from oracles import nms_oracle


def props_from(boxes, scores):
    return [Proposal(Box(*map(float, b)), float(s), i) for i, (b, s) in enumerate(zip(boxes, scores))]


def test_params_validation():
    with pytest.raises(ValueError):
        DetectionParams(score_threshold=1.5)
    with pytest.raises(ValueError):
        DetectionParams(top_n=0)


def test_rank_all_sorted_and_ties_by_index():
    g = generate_anchors(16, 16, sizes=[(16, 16)])
    pred = PredictionBatch([0.2, 0.9, 0.9, 0.5], np.zeros((4, 4)))
    props = rank_proposals(pred, g, 10)
    assert [p.index for p in props] == [1, 2, 3, 0]
    assert props[0].box.as_tuple() == tuple(g.boxes[1])


@given(st.integers(0, 2**31), st.integers(1, 60))
def test_rank_matches_sort_oracle(seed, top_n):
    rng = np.random.default_rng(seed)
    g = generate_anchors(24, 24, sizes=[(8, 8), (16, 16)])
    scores = np.round(rng.random(len(g)), 1)  # force ties
    props = rank_proposals(PredictionBatch(scores, np.zeros((len(g), 4))), g, top_n)
    oracle = sorted(range(len(g)), key=lambda i: (-scores[i], i))[:top_n]
    assert [p.index for p in props] == oracle


@given(st.integers(0, 2**31))
def test_rank_commutes_with_score_preserving_permutation(seed):
    rng = np.random.default_rng(seed)
    g = generate_anchors(24, 24, sizes=[(8, 8)])
    scores = rng.random(len(g))  # distinct, so the tie rule is not involved
    perm = rng.permutation(len(g))
    a = rank_proposals(PredictionBatch(scores, np.zeros((len(g), 4))), g, 5)
    b = rank_proposals(PredictionBatch(scores[perm], np.zeros((len(g), 4))), g.boxes[perm], 5)
    assert [p.box for p in a] == [p.box for p in b]


def test_nms_examples():
    disjoint = props_from([[0, 0, 5, 5], [10, 10, 15, 15], [20, 0, 25, 5]], [0.5, 0.9, 0.7])
    assert [p.index for p in nms(disjoint, 0.3)] == [1, 2, 0]
    same = props_from([[0, 0, 10, 10], [0, 0, 10, 10]], [0.9, 0.8])
    assert [p.score for p in nms(same, 0.3)] == [0.9]
    # suppression is strict ">", so identical boxes (IoU 1) both survive a threshold of 1
    assert len(nms(same, 1.0)) == 2
    assert nms([], 0.5) == []


@pytest.mark.parametrize("seed", range(20))
def test_nms_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    boxes = random_boxes(rng, 50, hi=80)
    scores = np.round(rng.random(50), 2)
    props = props_from(boxes, scores)
    kept = nms(props, 0.3)
    assert [p.index for p in kept] == nms_oracle(boxes.tolist(), scores.tolist(), 0.3)


@given(st.integers(0, 2**31), st.floats(0, 1))
def test_nms_invariants(seed, thresh):
    rng = np.random.default_rng(seed)
    props = props_from(random_boxes(rng, 30, hi=60), rng.random(30))
    kept = nms(props, thresh)
    assert set(p.index for p in kept) <= set(range(30))
    assert all(a.score >= b.score for a, b in zip(kept, kept[1:]))
    if len(kept) > 1:
        m = iou_matrix(np.array([p.box.as_tuple() for p in kept]), np.array([p.box.as_tuple() for p in kept]))
        np.fill_diagonal(m, 0)
        assert m.max() <= thresh


@given(st.integers(0, 2**31), st.floats(0, 1), st.floats(0, 1))
def test_count_monotone_in_threshold(seed, t1, t2):
    rng = np.random.default_rng(seed)
    props = props_from(random_boxes(rng, 30, hi=60), rng.random(30))
    lo, hi = sorted((t1, t2))
    assert count_objects(props, DetectionParams(hi))[0] <= count_objects(props, DetectionParams(lo))[0]


def test_count_examples():
    assert count_objects(props_from([[0, 0, 5, 5]], [0.2]))[0] == 0
    rng = np.random.default_rng(0)
    gts = []
    while len(gts) < 37:  # 37 non-overlapping cars
        b = random_boxes(rng, 1, hi=400, smin=10, smax=20)[0]
        if all(iou(Box(*b), Box(*g)) == 0 for g in gts):
            gts.append(b)
    n, dets = count_objects(props_from(gts, [1.0] * 37))
    assert n == 37
    doubled = props_from(gts + gts, [1.0] * 74)
    assert count_objects(doubled)[0] == 37


def test_detections_csv():
    text = detections_csv("s1", props_from([[0, 0, 5, 5]], [0.75]))
    assert text == "s1,0.0,0.0,5.0,5.0,0.75\n"
