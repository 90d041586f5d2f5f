import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from toothkit.errors import ClipWarning, DegenerateMaskError, ValidationError
from toothkit.imgproc import (
    AffineMap,
    clip_polygon,
    composite_tooth,
    crop_pad_resize,
    equalize_histogram,
    rasterize_polygon,
    rasterize_window,
    warp_affine,
)
from toothkit.types import BBox, PolygonMask
from conftest import pnpoly_mask, rect_ann, rect_polygon


# ------------------------------------------------------------ equalization


def test_equalize_constant_unchanged():
    img = np.full((5, 7), 128, np.uint8)
    np.testing.assert_array_equal(equalize_histogram(img), img)


def test_equalize_four_pixels():
    out = equalize_histogram(np.array([[50, 50, 100, 200]], np.uint8))
    assert out.tolist() == [[0, 0, 128, 255]]


def test_equalize_two_level_full_range():
    img = np.array([[0, 255, 0, 255]], np.uint8)
    np.testing.assert_array_equal(equalize_histogram(img), img)


def test_equalize_empty_rejected():
    with pytest.raises(ValueError):
        equalize_histogram(np.zeros((0, 3), np.uint8))


def _equalize_oracle(img):
    """Straight transcription of the formula with float math and round-half-up."""
    flat = img.ravel().astype(int)
    n = flat.size
    hist = np.bincount(flat, minlength=256)
    cdf = np.cumsum(hist)
    cdf_min = cdf[cdf > 0].min()
    if n == cdf_min:
        return img
    lut = np.floor((cdf - cdf_min) / (n - cdf_min) * 255 + 0.5 + 1e-9)
    return lut.clip(0, 255).astype(np.uint8)[img]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 40), st.integers(1, 255))
def test_equalize_matches_formula_and_near_idempotent(seed, h, w, levels):
    img = np.random.default_rng(seed).integers(0, levels + 1, (h, w), dtype=np.uint8)
    once = equalize_histogram(img)
    np.testing.assert_array_equal(once, _equalize_oracle(img))
    twice = equalize_histogram(once)
    assert np.abs(twice.astype(int) - once.astype(int)).max() <= 1


# ------------------------------------------------------------ rasterization


def test_rectangle_12_pixels():
    mask = rasterize_polygon(rect_polygon(2, 2, 4, 3), 10, 10)
    assert mask.sum() == 12
    np.testing.assert_array_equal(mask, pnpoly_mask(rect_polygon(2, 2, 4, 3).vertices, 10, 10))


def test_triangle_matches_oracle():
    tri = PolygonMask(((0, 0), (4, 0), (0, 4)))
    np.testing.assert_array_equal(rasterize_polygon(tri, 10, 10), pnpoly_mask(tri.vertices, 10, 10))


def test_outside_polygon_degenerate():
    with pytest.raises(DegenerateMaskError):
        rasterize_polygon(rect_polygon(20, 20, 5, 5), 10, 10)


def test_sliver_between_centers_degenerate():
    with pytest.raises(DegenerateMaskError):
        rasterize_polygon(rect_polygon(1.6, 1.0, 0.8, 5), 10, 10)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 9))
def test_random_polygons_match_oracle(seed, n):
    rng = np.random.default_rng(seed)
    # arbitrary (possibly self-intersecting) polygons, some vertices on pixel centers and edges
    pts = rng.integers(-4, 52, size=(n, 2)) / 2.0
    poly = PolygonMask(tuple(map(tuple, pts)))
    np.testing.assert_array_equal(rasterize_window(poly, 0, 0, 24, 24), pnpoly_mask(poly.vertices, 24, 24))


def test_window_equals_full_slice(rng):
    poly = PolygonMask.from_array(rng.uniform(0, 30, (7, 2)))
    full = rasterize_window(poly, 0, 0, 32, 32)
    np.testing.assert_array_equal(rasterize_window(poly, 5, 9, 13, 11), full[9:20, 5:18])


# ------------------------------------------------------------ affine maps


def test_affine_inverse_and_compose(rng):
    m = AffineMap.rotation(17, (40, 30)).then(AffineMap.scaling(1.7, 0.6)).then(AffineMap.translation(3, -2))
    pts = rng.uniform(-100, 100, (20, 2))
    np.testing.assert_allclose(m.inverse().apply(m.apply(pts)), pts, atol=1e-9)
    with pytest.raises(ValueError):
        AffineMap(1, 2, 0, 2, 4, 0)


def test_warp_identity_and_integer_shift(rng):
    img = rng.integers(0, 256, (20, 30), dtype=np.uint8)
    np.testing.assert_array_equal(warp_affine(img, AffineMap.identity(), img.shape), img)
    shifted = warp_affine(img, AffineMap.translation(3, 2), img.shape)
    np.testing.assert_array_equal(shifted[2:, 3:], img[:-2, :-3])
    assert (shifted[:2] == 0).all() and (shifted[:, :3] == 0).all()


# ------------------------------------------------------------ crop / pad / resize


def test_crop_full_square_is_identity(rng):
    img = rng.integers(0, 256, (1024, 1024), dtype=np.uint8)
    anns = [rect_ann(11, 100, 100, 40, 60)]
    out, new_anns, amap = crop_pad_resize(img, anns, BBox(0, 0, 1024, 1024))
    np.testing.assert_array_equal(out, img)
    assert new_anns == anns
    assert amap.to_list() == AffineMap.identity().to_list()


def test_wide_image_pad_and_scale():
    img = np.full((800, 1600), 90, np.uint8)
    anns = [rect_ann(21, 100, 50, 200, 100)]
    out, new_anns, amap = crop_pad_resize(img, anns, BBox(0, 0, 1600, 800))
    assert out.shape == (1024, 1024)
    b = new_anns[0].bbox
    np.testing.assert_allclose([b.x, b.y, b.w, b.h], [64, 288, 128, 64], atol=1e-9)
    # padding rows are at the top and bottom: 400 px each before scaling -> 256 after
    assert (out[:250] == 0).all() and (out[-250:] == 0).all() and (out[260:-260] == 90).all()
    back = amap.inverse().apply_polygon(new_anns[0].mask)
    np.testing.assert_allclose(back.as_array(), anns[0].mask.as_array(), atol=1e-6)


def test_tall_image_pads_horizontally():
    img = np.full((400, 200), 70, np.uint8)
    out, _, amap = crop_pad_resize(img, [], None, size=200)
    assert (out[:, :45] == 0).all() and (out[:, 55:145] == 70).all()
    np.testing.assert_allclose(amap.apply([[0, 0]]), [[50, 0]])


def test_default_roi_from_annotations():
    img = np.zeros((1000, 1000), np.uint8)
    anns = [rect_ann(11, 200, 300, 100, 100), rect_ann(21, 500, 300, 100, 200)]
    _, new_anns, amap = crop_pad_resize(img, anns, size=480)
    # union (200,300)-(600,500) + 10 % -> (160,280)-(640,520): 480 x 240, padded 120 above
    np.testing.assert_allclose(amap.apply([[160, 280]]), [[0, 120]], atol=1e-9)


def test_roi_outside_image_rejected():
    with pytest.raises(ValidationError):
        crop_pad_resize(np.zeros((10, 10), np.uint8), [], BBox(20, 20, 5, 5))


@settings(max_examples=40, deadline=None)
@given(st.integers(50, 400), st.integers(50, 400), st.integers(0, 2**32 - 1))
def test_crop_preserves_box_aspect(w, h, seed):
    rng = np.random.default_rng(seed)
    bw, bh = rng.uniform(5, w / 2), rng.uniform(5, h / 2)
    bx, by = rng.uniform(0, w - bw), rng.uniform(0, h - bh)
    ann = rect_ann(11, bx, by, bw, bh)
    _, new_anns, _ = crop_pad_resize(np.zeros((h, w), np.uint8), [ann], BBox(0, 0, w, h), size=128)
    nb = new_anns[0].bbox
    assert abs(nb.w / nb.h - bw / bh) <= 1e-9 * (bw / bh)


# ------------------------------------------------------------ clipping and compositing


def test_clip_polygon():
    clipped = clip_polygon(rect_polygon(-5, -5, 10, 10), 100, 100)
    assert clipped.bounds().to_list() == [0, 0, 5, 5]
    assert clip_polygon(rect_polygon(200, 0, 10, 10), 100, 100) is None


def test_composite_zero_mask_unchanged(rng):
    dst = rng.integers(0, 256, (30, 30), dtype=np.uint8)
    out = composite_tooth(dst, np.full((5, 5), 7, np.uint8), np.zeros((5, 5), bool), BBox(10, 10, 5, 5))
    np.testing.assert_array_equal(out, dst)


def test_composite_full_patch_replaces_25():
    dst = np.zeros((30, 30), np.uint8)
    out = composite_tooth(dst, np.full((5, 5), 200, np.uint8), np.ones((5, 5), bool), BBox(10, 10, 5, 5))
    assert (out != dst).sum() == 25 and (out[10:15, 10:15] == 200).all()


def test_composite_later_overwrites():
    dst = np.zeros((30, 30), np.uint8)
    a = composite_tooth(dst, np.full((6, 6), 100, np.uint8), np.ones((6, 6), bool), BBox(5, 5, 6, 6))
    b = composite_tooth(a, np.full((6, 6), 200, np.uint8), np.ones((6, 6), bool), BBox(8, 8, 6, 6))
    assert (b[8:11, 8:11] == 200).all() and (b[5:8, 5:8] == 100).all()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(-8, 30), st.integers(-8, 30))
def test_composite_changes_exactly_masked_in_bounds(seed, x, y):
    rng = np.random.default_rng(seed)
    dst = np.zeros((24, 24), np.uint8)
    mask = rng.random((7, 9)) < 0.5
    patch = np.full((7, 9), 255, np.uint8)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = composite_tooth(dst, patch, mask, BBox(x, y, 9, 7))
    expected = np.zeros_like(dst, bool)
    for r, c in zip(*np.nonzero(mask)):
        if 0 <= y + r < 24 and 0 <= x + c < 24:
            expected[y + r, x + c] = True
    np.testing.assert_array_equal(out == 255, expected)
    inside = 0 <= x and 0 <= y and x + 9 <= 24 and y + 7 <= 24
    assert any(issubclass(w.category, ClipWarning) for w in caught) == (not inside)


def test_composite_size_mismatch():
    with pytest.raises(ValueError):
        composite_tooth(np.zeros((10, 10), np.uint8), np.zeros((3, 3), np.uint8), np.ones((3, 4), bool), BBox(0, 0, 3, 3))
