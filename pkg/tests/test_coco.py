import copy
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings

from toothkit.coco import (
    CocoDataset,
    categories,
    dataset_from_dict,
    dataset_to_dict,
    load_images,
    parse_dataset,
    parse_predictions,
    predictions_from_list,
    save_images,
    serialize_dataset,
    serialize_predictions,
)
from toothkit.errors import MultiPolygonWarning, ParseError, ValidationError
from toothkit.types import BBox, Prediction, ToothClass
from strategies import dataset_dicts
from conftest import rect_polygon


def small_dict():
    """3 images, 7 annotations."""
    images = [{"id": i, "file_name": f"{i}.png", "width": 64, "height": 48, "age": 8 + i} for i in (1, 2, 3)]
    layout = {1: [11, 21, 55], 2: [36, 46], 3: [71, 18]}
    anns, k = [], 1
    for img_id, codes in layout.items():
        for j, code in enumerate(codes):
            x, y = 2 + 10 * j, 3 + j
            anns.append({"id": k, "image_id": img_id, "category_id": code, "bbox": [x, y, 8, 12],
                         "segmentation": [rect_polygon(x, y, 8, 12).flat()], "area": 96.0})
            k += 1
    return {"images": images, "annotations": anns, "categories": categories()}


def test_minimal_file_one_image(tmp_path):
    p = tmp_path / "d.json"
    p.write_text(json.dumps({"images": [{"id": 1, "file_name": "a.png", "width": 4, "height": 4}], "annotations": []}))
    d = parse_dataset(p)
    assert len(d.images) == 1 and not d.annotations


def test_round_trip_three_images(tmp_path):
    d = dataset_from_dict(small_dict())
    assert (len(d.images), len(d.annotations)) == (3, 7)
    serialize_dataset(d, tmp_path / "a.json")
    assert parse_dataset(tmp_path / "a.json") == d


def test_serialize_byte_stable(tmp_path):
    d = dataset_from_dict(small_dict())
    serialize_dataset(d, tmp_path / "a.json")
    serialize_dataset(dataset_from_dict(json.loads((tmp_path / "a.json").read_text())), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_empty_dataset_lists_all_categories(tmp_path):
    serialize_dataset(CocoDataset(), tmp_path / "e.json")
    data = json.loads((tmp_path / "e.json").read_text())
    assert data["images"] == [] and data["annotations"] == []
    assert [c["id"] for c in data["categories"]] == sorted(t.code for t in map(ToothClass, [c["id"] for c in data["categories"]]))
    assert len(data["categories"]) == 52


def test_key_order_fixed():
    out = dataset_to_dict(dataset_from_dict(small_dict()))
    assert list(out) == ["images", "annotations", "categories"]
    assert list(out["images"][0]) == ["id", "file_name", "width", "height", "age"]
    assert list(out["annotations"][0]) == ["id", "image_id", "category_id", "bbox", "segmentation", "area", "iscrowd"]


def test_segmentation_flat_list_read_by_reference_reader(tmp_path):
    coco = pytest.importorskip("pycocotools.coco")
    d = dataset_from_dict(small_dict())
    serialize_dataset(d, tmp_path / "a.json")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ref = coco.COCO(str(tmp_path / "a.json"))
    assert sorted(ref.getImgIds()) == [1, 2, 3]
    assert len(ref.getAnnIds()) == 7
    for a in d.annotations:
        r = ref.loadAnns([a.id])[0]
        assert r["category_id"] == a.tooth.code
        assert r["segmentation"] == [a.polygon.flat()]
        assert r["bbox"] == a.bbox.to_list()
        # reference rasterizer agrees on the polygon area to within the boundary pixels
        m = ref.annToMask(r)
        assert abs(m.sum() - a.polygon.area) <= 2 * (a.bbox.w + a.bbox.h) + 4


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        parse_dataset(p)


# each mutation breaks one declared invariant; the error must name the offender
def _mut(fn):
    data = small_dict()
    fn(data)
    return data


VIOLATIONS = {
    "dangling image": (lambda d: d["annotations"][2].update(image_id=999), "annotation 3"),
    "bad category": (lambda d: d["annotations"][0].update(category_id=19), "annotation 1"),
    "unlisted category": (lambda d: d.update(categories=[c for c in d["categories"] if c["id"] != 21]), "annotation 2"),
    "duplicate annotation id": (lambda d: d["annotations"][4].update(id=1), "annotation 1"),
    "duplicate image id": (lambda d: d["images"][1].update(id=1), "image 1"),
    "odd coordinate count": (lambda d: d["annotations"][5]["segmentation"][0].append(3.0), "annotation 6"),
    "too few coordinates": (lambda d: d["annotations"][5].update(segmentation=[[1, 1, 5, 5]]), "annotation 6"),
    "degenerate polygon": (lambda d: d["annotations"][6].update(segmentation=[[2, 3, 10, 3, 6, 3]], bbox=[2, 3, 8, 1]), "annotation 7"),
    "bbox disagrees": (lambda d: d["annotations"][3]["bbox"].__setitem__(0, 40), "annotation 4"),
    "zero width bbox": (lambda d: d["annotations"][3]["bbox"].__setitem__(2, 0), "annotation 4"),
    "repeated class": (lambda d: d["annotations"][1].update(category_id=11), "annotation 2"),
    "rle mask": (lambda d: d["annotations"][0].update(segmentation={"counts": [1], "size": [4, 4]}), "annotation 1"),
    "crowd": (lambda d: d["annotations"][0].update(iscrowd=1), "annotation 1"),
}


@pytest.mark.parametrize("name", sorted(VIOLATIONS))
def test_invariant_violations_name_offender(name):
    mutate, offender = VIOLATIONS[name]
    with pytest.raises(ValidationError) as info:
        dataset_from_dict(_mut(mutate))
    assert info.value.offender == offender
    assert offender in str(info.value)


@settings(max_examples=60, deadline=None)
@given(dataset_dicts())
def test_generated_datasets_round_trip(tmp_path_factory, data):
    d = dataset_from_dict(data)
    path = tmp_path_factory.mktemp("rt") / "d.json"
    serialize_dataset(d, path)
    assert parse_dataset(path) == d


def test_multi_polygon_uses_first_with_warning():
    data = small_dict()
    data["annotations"][0]["segmentation"].append(rect_polygon(2, 3, 4, 4).flat())
    d = dataset_from_dict(data)
    with pytest.warns(MultiPolygonWarning):
        ta = d.annotations[0].to_tooth_annotation()
    assert ta.mask == d.annotations[0].segmentation[0]


def test_predictions(tmp_path):
    assert predictions_from_list([]) == []
    preds = [Prediction(1, ToothClass(11), BBox(1, 2, 3, 4), 0.9),
             Prediction(2, ToothClass(85), BBox(5, 5, 6, 6), 0.25, rect_polygon(5, 5, 6, 6))]
    serialize_predictions(preds, tmp_path / "p.json")
    assert parse_predictions(tmp_path / "p.json") == preds
    for bad in ({"score": 1.3}, {"category_id": 99}, {"bbox": [0, 0, -1, 1]}):
        rec = {"image_id": 1, "category_id": 11, "bbox": [0, 0, 1, 1], "score": 0.5, **bad}
        with pytest.raises(ValidationError):
            predictions_from_list([rec])
    with pytest.raises(ParseError):
        predictions_from_list({"image_id": 1})


def test_png_round_trip_and_size_check(tmp_path):
    data = small_dict()
    d = dataset_from_dict(data)
    rasters = [np.random.default_rng(i).integers(0, 256, (48, 64), dtype=np.uint8) for i in range(3)]
    from dataclasses import replace
    d_px = replace(d, images=tuple(replace(img, pixels=r) for img, r in zip(d.images, rasters)))
    save_images(d_px, tmp_path)
    loaded = load_images(d, tmp_path)
    for img, r in zip(loaded.images, rasters):
        np.testing.assert_array_equal(img.pixels, r)
    bad = copy.deepcopy(data)
    bad["images"][0]["width"] = 65
    with pytest.raises(ValidationError):
        load_images(dataset_from_dict({"images": bad["images"], "annotations": []}), tmp_path)
