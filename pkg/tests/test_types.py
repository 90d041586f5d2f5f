import pytest
from hypothesis import given, strategies as st

from toothkit.types import (
    ALL_CLASSES,
    AnnotatedImage,
    BBox,
    PolygonMask,
    Prediction,
    ToothAnnotation,
    ToothClass,
    dentition_counterpart,
    mirror_class,
    round_half_up,
)
from conftest import rect_ann, rect_polygon

import numpy as np

codes = st.sampled_from([t.code for t in ALL_CLASSES])


def test_exactly_52_codes_valid():
    valid = []
    for code in range(100):
        try:
            ToothClass(code)
            valid.append(code)
        except ValueError:
            pass
    assert len(valid) == 52 == len(ALL_CLASSES)
    assert sum(not ToothClass(c).deciduous for c in valid) == 32
    assert {c // 10 for c in valid if ToothClass(c).deciduous} == {5, 6, 7, 8}


@pytest.mark.parametrize("bad", [0, 10, 19, 56, 66, 90, 111, -11, True, 11.0, "11"])
def test_invalid_codes_rejected(bad):
    with pytest.raises(ValueError):
        ToothClass(bad)


def test_mirror_examples():
    assert mirror_class(ToothClass(24)) == ToothClass(14)
    assert mirror_class(ToothClass(75)) == ToothClass(85)
    assert mirror_class(mirror_class(ToothClass(37))) == ToothClass(37)


def test_mirror_is_bijection_preserving_position_and_dentition():
    images = {mirror_class(t) for t in ALL_CLASSES}
    assert images == set(ALL_CLASSES)
    for t in ALL_CLASSES:
        m = mirror_class(t)
        assert m != t
        assert (m.position, m.deciduous) == (t.position, t.deciduous)
        assert mirror_class(m) == t


def test_dentition_counterpart_examples():
    assert dentition_counterpart(ToothClass(55)) == ToothClass(15)
    assert dentition_counterpart(ToothClass(18)) is None
    assert dentition_counterpart(ToothClass(31)) == ToothClass(71)


@given(codes)
def test_dentition_counterpart_symmetric(code):
    t = ToothClass(code)
    c = dentition_counterpart(t)
    if c is None:
        assert not t.deciduous and t.position >= 6
    else:
        assert c.deciduous != t.deciduous
        assert c.position == t.position
        assert dentition_counterpart(c) == t


def test_index_matches_table_order():
    assert [t.index for t in ALL_CLASSES] == list(range(52))


@pytest.mark.parametrize("args", [(0, 0, 0, 1), (0, 0, 1, -1), (float("nan"), 0, 1, 1), (0, float("inf"), 1, 1)])
def test_bbox_invariants(args):
    with pytest.raises(ValueError):
        BBox(*args)


def test_round_half_up():
    assert list(round_half_up([0.5, 1.5, 2.5, -0.5, 51.2])) == [1, 2, 3, 0, 51]


def test_polygon_needs_three_vertices():
    with pytest.raises(ValueError):
        PolygonMask(((0, 0), (1, 1)))


def test_annotation_bbox_must_match_polygon_bounds():
    rect_ann(11, 10, 10, 5, 5)
    ToothAnnotation(ToothClass(11), BBox(9.2, 10, 6, 5.9), rect_polygon(10, 10, 5, 5))
    with pytest.raises(ValueError):
        ToothAnnotation(ToothClass(11), BBox(8, 10, 5, 5), rect_polygon(10, 10, 5, 5))


def test_annotated_image_rejects_repeated_class():
    pixels = np.zeros((32, 32), np.uint8)
    AnnotatedImage(1, pixels, (rect_ann(11, 1, 1, 4, 4), rect_ann(21, 8, 1, 4, 4)))
    with pytest.raises(ValueError):
        AnnotatedImage(1, pixels, (rect_ann(11, 1, 1, 4, 4), rect_ann(11, 8, 1, 4, 4)))


@pytest.mark.parametrize("score", [-0.01, 1.3, float("nan")])
def test_prediction_score_range(score):
    with pytest.raises(ValueError):
        Prediction(1, ToothClass(11), BBox(0, 0, 1, 1), score)
