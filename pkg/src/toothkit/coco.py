"""COCO ground-truth and COCO-results prediction files.

Category ids are FDI codes. Serialized key order is fixed:

* top level: ``images``, ``annotations``, ``categories``
* image: ``id``, ``file_name``, ``width``, ``height``, ``age`` (only when known)
* annotation: ``id``, ``image_id``, ``category_id``, ``bbox``, ``segmentation``,
  ``area``, ``iscrowd``
* prediction: ``image_id``, ``category_id``, ``bbox``, ``score``,
  ``segmentation`` (optional), ``probs`` (optional)

Images are always followed by all 52 categories in ascending code order.
"""
from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .errors import MultiPolygonWarning, ParseError, ValidationError
from .types import (
    ALL_CLASSES,
    AnnotatedImage,
    BBox,
    PolygonMask,
    Prediction,
    ToothAnnotation,
    ToothClass,
    _is_valid_code,
)


@dataclass(frozen=True)
class CocoImage:
    id: int
    file_name: str
    width: int
    height: int
    age: Optional[int] = None
    # raster is loaded on demand and ignored by equality
    pixels: Optional[np.ndarray] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class CocoAnnotation:
    id: int
    image_id: int
    tooth: ToothClass
    bbox: BBox
    segmentation: tuple[PolygonMask, ...]
    area: float

    @property
    def polygon(self) -> PolygonMask:
        return self.segmentation[0]

    def to_tooth_annotation(self) -> ToothAnnotation:
        if len(self.segmentation) > 1:
            warnings.warn(
                f"annotation {self.id}: {len(self.segmentation)} polygons, using the first",
                MultiPolygonWarning,
                stacklevel=2,
            )
        return ToothAnnotation(self.tooth, self.bbox, self.polygon)


def _annotation_from_tooth(ann_id: int, image_id: int, ann: ToothAnnotation) -> CocoAnnotation:
    return CocoAnnotation(ann_id, image_id, ann.tooth, ann.bbox, (ann.mask,), ann.mask.area)


@dataclass(frozen=True)
class CocoDataset:
    images: tuple[CocoImage, ...] = ()
    annotations: tuple[CocoAnnotation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "annotations", tuple(self.annotations))

    def image(self, image_id: int) -> CocoImage:
        for img in self.images:
            if img.id == image_id:
                return img
        raise KeyError(image_id)

    def annotations_by_image(self) -> dict[int, list[CocoAnnotation]]:
        out: dict[int, list[CocoAnnotation]] = {img.id: [] for img in self.images}
        for ann in self.annotations:
            out.setdefault(ann.image_id, []).append(ann)
        return out

    def label_sets(self) -> dict[int, frozenset[ToothClass]]:
        return {i: frozenset(a.tooth for a in anns) for i, anns in self.annotations_by_image().items()}

    def subset(self, image_ids: Iterable[int]) -> "CocoDataset":
        keep = set(image_ids)
        return CocoDataset(
            tuple(img for img in self.images if img.id in keep),
            tuple(a for a in self.annotations if a.image_id in keep),
        )

    def next_ids(self) -> tuple[int, int]:
        """First unused image id and annotation id."""
        img = max((i.id for i in self.images), default=0) + 1
        ann = max((a.id for a in self.annotations), default=0) + 1
        return img, ann

    def annotated_images(self) -> list[AnnotatedImage]:
        """Join images with annotations; pixels must be loaded."""
        by_image = self.annotations_by_image()
        out = []
        for img in self.images:
            if img.pixels is None:
                raise ValueError(f"image {img.id} has no pixels loaded")
            anns = tuple(a.to_tooth_annotation() for a in by_image[img.id])
            out.append(AnnotatedImage(img.id, img.pixels, anns, img.age))
        return out

    def with_annotated_images(self, items: Sequence[tuple[CocoImage, Sequence[ToothAnnotation]]]) -> "CocoDataset":
        """Append images (with their annotations) using fresh annotation ids."""
        images = list(self.images)
        anns = list(self.annotations)
        _, next_ann = self.next_ids()
        for img, tooth_anns in items:
            images.append(img)
            for ta in tooth_anns:
                anns.append(_annotation_from_tooth(next_ann, img.id, ta))
                next_ann += 1
        return CocoDataset(tuple(images), tuple(anns))

    @classmethod
    def from_annotated_images(cls, items: Sequence[AnnotatedImage], file_names: Optional[Sequence[str]] = None) -> "CocoDataset":
        images, anns = [], []
        next_ann = 1
        for k, item in enumerate(items):
            name = file_names[k] if file_names else f"{item.id:06d}.png"
            images.append(CocoImage(item.id, name, item.width, item.height, item.patient_age, item.pixels))
            for ta in item.annotations:
                anns.append(_annotation_from_tooth(next_ann, item.id, ta))
                next_ann += 1
        return cls(tuple(images), tuple(anns))


# ---------------------------------------------------------------- validation


def _int_field(record: dict, key: str, offender: str) -> int:
    value = record.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"field {key!r} must be an integer, got {value!r}", offender)
    return value


def _bbox_field(raw: Any, offender: str) -> BBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ValidationError(f"bbox must be [x, y, w, h], got {raw!r}", offender)
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
        raise ValidationError(f"bbox values must be numbers, got {raw!r}", offender)
    try:
        return BBox(*raw)
    except ValueError as exc:
        raise ValidationError(str(exc), offender) from None


def _polygon_from_flat(raw: Any, offender: str) -> PolygonMask:
    if not isinstance(raw, (list, tuple)) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw
    ):
        raise ValidationError("polygon must be a flat list of numbers", offender)
    if len(raw) % 2 or len(raw) < 6:
        raise ValidationError(
            f"polygon needs an even coordinate count >= 6, got {len(raw)}", offender
        )
    try:
        poly = PolygonMask.from_flat([float(v) for v in raw])
    except ValueError as exc:
        raise ValidationError(str(exc), offender) from None
    if not poly.area > 0.0:
        raise ValidationError("degenerate polygon (zero area)", offender)
    return poly


def _segmentation_field(raw: Any, offender: str) -> tuple[PolygonMask, ...]:
    if isinstance(raw, dict):
        raise ValidationError("RLE segmentations are not supported", offender)
    if not isinstance(raw, list) or not raw:
        raise ValidationError("segmentation must be a non-empty list of polygons", offender)
    if all(isinstance(v, (int, float)) for v in raw):
        # tolerate a bare flat polygon
        raw = [raw]
    return tuple(_polygon_from_flat(p, offender) for p in raw)


def _category(value: Any, offender: str) -> ToothClass:
    if isinstance(value, bool) or not isinstance(value, int) or not _is_valid_code(value):
        raise ValidationError(f"unknown category_id {value!r}", offender)
    return ToothClass(value)


def dataset_from_dict(data: Any) -> CocoDataset:
    """Build and validate a dataset from decoded JSON."""
    if not isinstance(data, dict):
        raise ParseError("COCO file must hold a JSON object")
    for key in ("images", "annotations"):
        if not isinstance(data.get(key, []), list):
            raise ValidationError(f"{key!r} must be a list")

    listed = None
    if data.get("categories"):
        listed = set()
        for cat in data["categories"]:
            cid = cat.get("id") if isinstance(cat, dict) else None
            _category(cid, f"category {cid!r}")
            listed.add(cid)

    images, image_ids = [], set()
    for raw in data.get("images", []):
        if not isinstance(raw, dict):
            raise ValidationError("image record must be an object")
        offender = f"image {raw.get('id')!r}"
        img_id = _int_field(raw, "id", offender)
        if img_id in image_ids:
            raise ValidationError("duplicate image id", offender)
        image_ids.add(img_id)
        width = _int_field(raw, "width", offender)
        height = _int_field(raw, "height", offender)
        if width <= 0 or height <= 0:
            raise ValidationError("image size must be positive", offender)
        file_name = raw.get("file_name")
        if not isinstance(file_name, str):
            raise ValidationError("file_name must be a string", offender)
        age = raw.get("age")
        if age is not None:
            age = _int_field(raw, "age", offender)
        images.append(CocoImage(img_id, file_name, width, height, age))

    anns, ann_ids = [], set()
    classes_seen: set[tuple[int, ToothClass]] = set()
    for raw in data.get("annotations", []):
        if not isinstance(raw, dict):
            raise ValidationError("annotation record must be an object")
        offender = f"annotation {raw.get('id')!r}"
        ann_id = _int_field(raw, "id", offender)
        if ann_id in ann_ids:
            raise ValidationError("duplicate annotation id", offender)
        ann_ids.add(ann_id)
        image_id = _int_field(raw, "image_id", offender)
        if image_id not in image_ids:
            raise ValidationError(f"references missing image_id {image_id}", offender)
        tooth = _category(raw.get("category_id"), offender)
        if listed is not None and tooth.code not in listed:
            raise ValidationError(f"category_id {tooth.code} not listed in categories", offender)
        if raw.get("iscrowd", 0):
            raise ValidationError("crowd annotations are not supported", offender)
        bbox = _bbox_field(raw.get("bbox"), offender)
        segmentation = _segmentation_field(raw.get("segmentation"), offender)
        pts = np.concatenate([p.as_array() for p in segmentation])
        if not bbox.close_to(BBox.bounds_of(pts)):
            raise ValidationError("bbox disagrees with polygon bounds by more than 1 px", offender)
        if (image_id, tooth) in classes_seen:
            raise ValidationError(f"tooth {tooth} appears twice in image {image_id}", offender)
        classes_seen.add((image_id, tooth))
        area = raw.get("area")
        if area is None:
            area = sum(p.area for p in segmentation)
        elif isinstance(area, bool) or not isinstance(area, (int, float)) or not math.isfinite(area):
            raise ValidationError("area must be a finite number", offender)
        anns.append(CocoAnnotation(ann_id, image_id, tooth, bbox, segmentation, float(area)))
    return CocoDataset(tuple(images), tuple(anns))


def _load_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON ({exc})") from None


def parse_dataset(path) -> CocoDataset:
    return dataset_from_dict(_load_json(path))


# ---------------------------------------------------------- serialization


def categories() -> list[dict]:
    return [
        {"id": t.code, "name": str(t.code), "supercategory": "deciduous" if t.deciduous else "permanent"}
        for t in sorted(ALL_CLASSES)
    ]


def dataset_to_dict(d: CocoDataset) -> dict:
    images = []
    for img in d.images:
        rec: dict[str, Any] = {"id": img.id, "file_name": img.file_name, "width": img.width, "height": img.height}
        if img.age is not None:
            rec["age"] = img.age
        images.append(rec)
    anns = [
        {
            "id": a.id,
            "image_id": a.image_id,
            "category_id": a.tooth.code,
            "bbox": a.bbox.to_list(),
            "segmentation": [p.flat() for p in a.segmentation],
            "area": a.area,
            "iscrowd": 0,
        }
        for a in d.annotations
    ]
    return {"images": images, "annotations": anns, "categories": categories()}


def dumps(obj: Any) -> str:
    """Deterministic JSON text used for every file the toolkit writes."""
    return json.dumps(obj, indent=1, ensure_ascii=True, allow_nan=False) + "\n"


def write_json(obj: Any, path) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))
    os.replace(tmp, path)


def serialize_dataset(d: CocoDataset, path) -> None:
    write_json(dataset_to_dict(d), path)


# ------------------------------------------------------------ predictions


@dataclass(frozen=True)
class PredictionRecord:
    """A prediction plus optional per-class probabilities (52 classes + no-object)."""

    prediction: Prediction
    probs: Optional[tuple[float, ...]] = None


def predictions_from_list(data: Any) -> list[PredictionRecord]:
    if not isinstance(data, list):
        raise ParseError("prediction file must hold a JSON array")
    out = []
    for k, raw in enumerate(data):
        offender = f"prediction {k}"
        if not isinstance(raw, dict):
            raise ValidationError("prediction must be an object", offender)
        image_id = _int_field(raw, "image_id", offender)
        tooth = _category(raw.get("category_id"), offender)
        bbox = _bbox_field(raw.get("bbox"), offender)
        score = raw.get("score")
        if isinstance(score, bool) or not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
            raise ValidationError(f"score must lie in [0, 1], got {score!r}", offender)
        mask = None
        if raw.get("segmentation") is not None:
            mask = _segmentation_field(raw["segmentation"], offender)[0]
        probs = raw.get("probs")
        if probs is not None:
            if not isinstance(probs, list) or len(probs) != len(ALL_CLASSES) + 1:
                raise ValidationError(f"probs must list {len(ALL_CLASSES) + 1} values", offender)
            probs = tuple(float(p) for p in probs)
        out.append(PredictionRecord(Prediction(image_id, tooth, bbox, float(score), mask), probs))
    return out


def parse_prediction_records(path) -> list[PredictionRecord]:
    return predictions_from_list(_load_json(path))


def parse_predictions(path) -> list[Prediction]:
    return [r.prediction for r in parse_prediction_records(path)]


def predictions_to_list(preds: Iterable[Prediction | PredictionRecord]) -> list[dict]:
    out = []
    for item in preds:
        rec_probs = None
        if isinstance(item, PredictionRecord):
            item, rec_probs = item.prediction, item.probs
        rec: dict[str, Any] = {
            "image_id": item.image_id,
            "category_id": item.tooth.code,
            "bbox": item.bbox.to_list(),
            "score": item.score,
        }
        if item.mask is not None:
            rec["segmentation"] = [item.mask.flat()]
        if rec_probs is not None:
            rec["probs"] = list(rec_probs)
        out.append(rec)
    return out


def serialize_predictions(preds: Iterable[Prediction | PredictionRecord], path) -> None:
    write_json(predictions_to_list(preds), path)


def predictions_from_dataset(d: CocoDataset, score: float = 1.0, with_masks: bool = True) -> list[Prediction]:
    """Ground truth turned into a prediction list (handy for self-evaluation)."""
    return [
        Prediction(a.image_id, a.tooth, a.bbox, score, a.polygon if with_masks else None)
        for a in d.annotations
    ]


# ------------------------------------------------------------------ images


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return arr.copy()


def save_png(pixels: np.ndarray, path) -> None:
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="L").save(path, format="PNG", optimize=False)


def load_images(d: CocoDataset, images_dir) -> CocoDataset:
    """Attach pixel rasters read from ``images_dir / file_name``."""
    images_dir = Path(images_dir)
    loaded = []
    for img in d.images:
        pixels = load_png(images_dir / img.file_name)
        if pixels.shape != (img.height, img.width):
            raise ValidationError(
                f"raster is {pixels.shape[1]}x{pixels.shape[0]}, record says {img.width}x{img.height}",
                f"image {img.id}",
            )
        loaded.append(replace(img, pixels=pixels))
    return replace(d, images=tuple(loaded))


def save_images(d: CocoDataset, images_dir) -> list[Path]:
    images_dir = Path(images_dir)
    written = []
    for img in d.images:
        if img.pixels is None:
            raise ValueError(f"image {img.id} has no pixels to save")
        out = images_dir / img.file_name
        save_png(img.pixels, out)
        written.append(out)
    return written
