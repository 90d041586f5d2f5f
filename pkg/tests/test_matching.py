import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from toothkit.matching import (
    LossWeights,
    SlotOutput,
    detr_match,
    dice,
    giou,
    hungarian_assign,
    assignment_cost,
    hungarian_loss,
    iou,
    l1_box,
    softmax,
)
from toothkit.imgproc import rasterize_window
from toothkit.types import NO_OBJECT, BBox, ToothClass
from conftest import box_pixel_area, brute_force_assignment, rect_ann, rect_polygon

A, B = BBox(0, 0, 10, 10), BBox(5, 5, 10, 10)


def onehot(index, p=1.0):
    v = np.full(53, (1 - p) / 52)
    v[index] = p
    return v


def test_iou_giou_worked_examples():
    assert iou(A, B) == pytest.approx(1 / 7, abs=1e-12)
    assert giou(A, B) == pytest.approx(1 / 7 - 50 / 225, abs=1e-9)
    assert giou(BBox(0, 0, 1, 1), BBox(2, 0, 1, 1)) == pytest.approx(-1 / 3, abs=1e-12)
    assert iou(A, A) == giou(A, A) == 1.0
    assert iou(A, BBox(20, 20, 2, 2)) == 0.0


def test_l1_box_examples():
    assert l1_box(A, BBox(10, 0, 10, 10), 100) == pytest.approx(0.1)
    assert l1_box(A, A, 100) == 0.0
    assert l1_box(A, BBox(10, 0, 10, 20), (100, 50)) == pytest.approx(0.1 + 0.1 + 0.2)


def test_dice_examples():
    m = np.zeros((10, 10), bool)
    m[2:5, 2:6] = True
    assert dice(m, m) == 1.0
    assert dice(m, ~m) == 0.0
    left, top = np.zeros((10, 10), bool), np.zeros((10, 10), bool)
    left[:, :5] = True
    top[:5] = True
    assert dice(left, top) == 0.5
    assert dice(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) == 1.0
    with pytest.raises(ValueError):
        dice(left, np.zeros((9, 10), bool))


def test_metrics_match_pixel_oracle_on_random_pairs():
    rng = np.random.default_rng(7)
    for _ in range(200):
        # quarter-pixel grid coordinates so the sample-count oracle is exact
        a = BBox(*(rng.integers(0, 80, 2) / 4), *(rng.integers(1, 60, 2) / 4))
        b = BBox(*(rng.integers(0, 80, 2) / 4), *(rng.integers(1, 60, 2) / 4))
        inter, union, hull = box_pixel_area(a, b)
        assert abs(iou(a, b) - inter / union) <= 1e-6
        assert abs(giou(a, b) - (inter / union - (hull - union) / hull)) <= 1e-6
        assert giou(a, b) <= iou(a, b) + 1e-12
        assert iou(a, b) == iou(b, a) and giou(a, b) == giou(b, a) and l1_box(a, b, 64) == l1_box(b, a, 64)
        ma, mb = rng.random((16, 16)) < 0.4, rng.random((16, 16)) < 0.4
        assert abs(dice(ma, mb) - 2 * (ma & mb).sum() / (ma.sum() + mb.sum())) <= 1e-6
        assert dice(ma, mb) == dice(mb, ma)


def test_giou_equals_iou_when_nested():
    outer, inner = BBox(0, 0, 10, 10), BBox(2, 3, 4, 5)
    assert giou(outer, inner) == pytest.approx(iou(outer, inner))


# ------------------------------------------------------------ Hungarian


def test_hungarian_worked_example():
    c = np.array([[4, 1, 3], [2, 0, 5], [3, 2, 2]])
    cols = hungarian_assign(c)
    assert list(cols) == [1, 0, 2]
    assert assignment_cost(c, cols) == 5


def test_hungarian_identity_and_shift(rng):
    c = rng.uniform(1, 2, (6, 6)) + np.diag(np.full(6, -10.0))
    assert list(hungarian_assign(c)) == list(range(6))
    c = rng.uniform(0, 1, (6, 6))
    assert list(hungarian_assign(c + 42.0)) == list(hungarian_assign(c))


def test_hungarian_errors():
    with pytest.raises(ValueError):
        hungarian_assign(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        hungarian_assign(np.array([[0, np.inf], [1, 2]]))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**32 - 1), st.booleans())
def test_hungarian_optimal_property(n, seed, integer):
    rng = np.random.default_rng(seed)
    c = rng.integers(-5, 6, (n, n)).astype(float) if integer else rng.normal(size=(n, n))
    cols = hungarian_assign(c)
    assert sorted(cols) == list(range(n))
    assert assignment_cost(c, cols) == pytest.approx(brute_force_assignment(c), abs=1e-9)


def test_hungarian_large_is_permutation(rng):
    c = rng.uniform(size=(100, 100))
    cols = hungarian_assign(c)
    assert sorted(cols) == list(range(100))


# ------------------------------------------------------------ matching and loss


def test_single_pair_match_cost():
    gt = rect_ann(11, 10, 10, 20, 30)
    slot = SlotOutput(onehot(ToothClass(11).index), gt.bbox)
    w = LossWeights()
    m = detr_match([slot], [gt], w, 100)
    assert m.pairs == [(0, 0)] and m.total_cost == pytest.approx(-w.w_class)


def _random_slots(rng, n):
    slots = []
    for _ in range(n):
        x, y = rng.uniform(0, 60, 2)
        w, h = rng.uniform(5, 30, 2)
        slots.append(SlotOutput(softmax(rng.normal(size=53)), BBox(x, y, w, h)))
    return slots


def test_match_equals_brute_force_injections(rng):
    for _ in range(50):
        slots = _random_slots(rng, 3)
        gts = [rect_ann(11, 5, 5, 20, 20), rect_ann(46, 40, 30, 15, 25)]
        m = detr_match(slots, gts, LossWeights(), 100)
        best = min(
            itertools.permutations(range(3), 2),
            key=lambda inj: sum(m.cost[i, j] for j, i in enumerate(inj)),
        )
        chosen = {j: i for i, j in m.pairs}
        assert tuple(chosen[j] for j in range(2)) == best


def test_match_invariant_to_gt_order_and_logit_shift(rng):
    gts = [rect_ann(11, 5, 5, 20, 20), rect_ann(46, 40, 30, 15, 25), rect_ann(83, 70, 10, 10, 30)]
    for _ in range(20):
        logits = rng.normal(size=(5, 53))
        boxes = [BBox(*rng.uniform(0, 60, 2), *rng.uniform(5, 30, 2)) for _ in range(5)]
        slots = [SlotOutput(softmax(l), b) for l, b in zip(logits, boxes)]
        shifted = [SlotOutput(softmax(l + 3.7), b) for l, b in zip(logits, boxes)]
        base = dict((j, i) for i, j in detr_match(slots, gts).pairs)
        perm = [2, 0, 1]
        permuted = dict((j, i) for i, j in detr_match(slots, [gts[k] for k in perm]).pairs)
        assert {perm[j]: i for j, i in permuted.items()} == base
        assert dict((j, i) for i, j in detr_match(shifted, gts).pairs) == base


def test_unnormalized_probabilities_rejected():
    with pytest.raises(ValueError):
        SlotOutput(np.full(53, 0.5), A)


def test_perfect_prediction_zero_loss():
    gts = [rect_ann(11, 10, 10, 20, 30), rect_ann(75, 50, 50, 10, 10)]
    slots = [SlotOutput(onehot(NO_OBJECT), BBox(0, 0, 5, 5))]
    slots += [SlotOutput(onehot(g.tooth.index), g.bbox, rasterize_window(g.mask, 0, 0, 100, 100)) for g in gts]
    loss = hungarian_loss(slots, gts, LossWeights(), 100)
    assert loss.total == 0.0 and loss.finite


def test_nll_single_pair_is_one():
    gt = rect_ann(11, 10, 10, 20, 30)
    p = np.full(53, (1 - math.exp(-1)) / 52)
    p[gt.tooth.index] = math.exp(-1)
    loss = hungarian_loss([SlotOutput(p, gt.bbox)], [gt], LossWeights(1, 5, 2, 1), 100)
    assert abs(loss.classification - 1.0) <= 1e-12
    assert loss.l1 == loss.giou == loss.dice == 0.0


def test_zero_probability_is_infinite_signal():
    gt = rect_ann(11, 10, 10, 20, 30)
    p = onehot(ToothClass(21).index)
    loss = hungarian_loss([SlotOutput(p, gt.bbox)], [gt], LossWeights(), 100)
    assert not loss.finite and math.isinf(loss.classification)


def test_loss_non_negative(rng):
    gts = [rect_ann(11, 5, 5, 20, 20), rect_ann(46, 40, 30, 15, 25)]
    for _ in range(30):
        loss = hungarian_loss(_random_slots(rng, 4), gts, LossWeights(), 100)
        assert loss.finite and loss.total > 0


def test_loss_weights_validated():
    with pytest.raises(ValueError):
        LossWeights(0, 0, 0, 0)
    with pytest.raises(ValueError):
        LossWeights(-1, 1, 1, 1)
