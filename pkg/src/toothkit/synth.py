"""Synthetic panoramics: paste banked teeth into tooth-free ("empty") radiographs.

Teeth keep the coordinates they had in their source panoramic, so every
source and every empty must share one raster size (1024 x 1024 after
preprocessing).
"""
from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .coco import CocoDataset
from .errors import (
    ClipWarning,
    DegenerateToothWarning,
    MissingClassWarning,
    ToothkitError,
)
from .imgproc import clip_polygon, composite_tooth, polygon_inside, rasterize_window
from .matching import iou
from .types import AnnotatedImage, BBox, PolygonMask, ToothAnnotation, ToothClass, as_tooth

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ToothBankEntry:
    tooth: ToothClass
    pixels: np.ndarray = field(repr=False, compare=False)
    mask: np.ndarray = field(repr=False, compare=False)
    source_bbox: BBox
    polygon: PolygonMask
    source_image_id: int
    source_annotation_id: int = -1
    source_age: Optional[int] = None
    source_size: tuple[int, int] = (1024, 1024)  # (width, height)


@dataclass(frozen=True)
class EmptyPanoramic:
    id: str
    pixels: np.ndarray = field(repr=False, compare=False)
    age: Optional[int] = None


@dataclass(frozen=True)
class PatientSpec:
    present_teeth: frozenset[ToothClass]
    age: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "present_teeth", frozenset(as_tooth(t) for t in self.present_teeth))


class SynthesisError(ToothkitError):
    pass


def build_tooth_bank(d: CocoDataset) -> list[ToothBankEntry]:
    """One bank entry per annotation: the pixels under its box plus the polygon mask."""
    bank = []
    by_image = d.annotations_by_image()
    for img in d.images:
        if img.pixels is None:
            raise ValueError(f"image {img.id} has no pixels loaded")
        for ann in by_image[img.id]:
            ta = ann.to_tooth_annotation()
            c0, r0, c1, r1 = ann.bbox.pixel_window()
            c0, r0 = max(c0, 0), max(r0, 0)
            c1, r1 = min(c1, img.width), min(r1, img.height)
            mask = rasterize_window(ta.mask, c0, r0, c1 - c0, r1 - r0)
            if not mask.any():
                warnings.warn(f"annotation {ann.id}: degenerate polygon skipped", DegenerateToothWarning, stacklevel=2)
                continue
            bank.append(
                ToothBankEntry(
                    tooth=ann.tooth,
                    pixels=img.pixels[r0:r1, c0:c1].copy(),
                    mask=mask,
                    source_bbox=ann.bbox,
                    polygon=ta.mask,
                    source_image_id=img.id,
                    source_annotation_id=ann.id,
                    source_age=img.age,
                    source_size=(img.width, img.height),
                )
            )
    return bank


def _age_match(a: Optional[int], b: Optional[int], tolerance: int) -> bool:
    return a is not None and b is not None and abs(a - b) <= tolerance


def _pick(rng: np.random.Generator, pool: Sequence[int], preferred: Sequence[int]) -> int:
    choices = preferred if preferred else pool
    return choices[int(rng.integers(len(choices)))]


@dataclass(frozen=True)
class Provenance:
    empty_id: str
    teeth: tuple[dict, ...]
    skipped: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {"empty_id": self.empty_id, "teeth": list(self.teeth), "skipped": list(self.skipped)}


def synthesize_panoramic(
    spec: PatientSpec,
    empties: Sequence[EmptyPanoramic],
    bank: Sequence[ToothBankEntry],
    seed=0,
    image_id: int = 1,
    age_tolerance: int = 0,
    overlap_reject_iou: Optional[float] = None,
) -> tuple[AnnotatedImage, Provenance]:
    """Compose one radiograph for ``spec``.

    The empty and each tooth are drawn uniformly from age matches when any
    exist (``|age difference| <= age_tolerance``), otherwise from the whole
    pool. Teeth are pasted in ascending code order at their source
    coordinates, so later teeth win on overlaps. Classes absent from the
    bank are skipped with a :class:`MissingClassWarning`.
    """
    if not empties:
        raise SynthesisError("no empty panoramics supplied")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    everyone = list(range(len(empties)))
    same_age = [k for k in everyone if _age_match(empties[k].age, spec.age, age_tolerance)]
    empty = empties[_pick(rng, everyone, same_age)]
    canvas = np.asarray(empty.pixels, dtype=np.uint8)
    height, width = canvas.shape

    by_class: dict[ToothClass, list[int]] = {}
    for k, entry in enumerate(bank):
        by_class.setdefault(entry.tooth, []).append(k)

    placed: list[ToothAnnotation] = []
    teeth, skipped = [], []
    for tooth in sorted(spec.present_teeth):
        pool = by_class.get(tooth, [])
        if not pool:
            warnings.warn(f"no bank entry for tooth {tooth}", MissingClassWarning, stacklevel=2)
            skipped.append({"tooth": tooth.code, "reason": "missing_class"})
            continue
        matches = [k for k in pool if _age_match(bank[k].source_age, spec.age, age_tolerance)]
        k = _pick(rng, pool, matches)
        entry = bank[k]
        if entry.source_size != (width, height):
            raise SynthesisError(
                f"bank entry {k} comes from a {entry.source_size[0]}x{entry.source_size[1]} image, "
                f"empty {empty.id!r} is {width}x{height}"
            )
        if overlap_reject_iou is not None and any(iou(entry.source_bbox, p.bbox) > overlap_reject_iou for p in placed):
            skipped.append({"tooth": tooth.code, "reason": "overlap", "bank_index": k})
            continue
        c0, r0, _, _ = entry.source_bbox.pixel_window()
        at = BBox(max(c0, 0), max(r0, 0), entry.mask.shape[1], entry.mask.shape[0])
        canvas = composite_tooth(canvas, entry.pixels, entry.mask, at)
        polygon = entry.polygon
        if not polygon_inside(polygon, width, height):
            warnings.warn(f"tooth {tooth} polygon clipped to the canvas", ClipWarning, stacklevel=2)
            polygon = clip_polygon(polygon, width, height)
            if polygon is None:
                skipped.append({"tooth": tooth.code, "reason": "off_canvas", "bank_index": k})
                continue
        ann = ToothAnnotation(tooth, polygon.bounds() if polygon is not entry.polygon else entry.source_bbox, polygon)
        placed.append(ann)
        teeth.append(
            {
                "tooth": tooth.code,
                "bank_index": k,
                "source_image_id": entry.source_image_id,
                "source_annotation_id": entry.source_annotation_id,
            }
        )
    out = AnnotatedImage(image_id, canvas, tuple(placed), spec.age)
    return out, Provenance(empty.id, tuple(teeth), tuple(skipped))


def overlapping_pairs(boxes: Sequence[BBox]) -> int:
    """Number of box pairs with positive intersection area."""
    return sum(1 for a, b in combinations(boxes, 2) if iou(a, b) > 0)


@dataclass
class SynthesisResult:
    dataset: CocoDataset
    provenance: list[dict]
    overlap_pairs: int
    errors: list[dict]

    def provenance_json(self) -> dict:
        return {"images": self.provenance, "overlap_pairs": self.overlap_pairs, "errors": self.errors}


def synthesize_batch(
    specs: Sequence[PatientSpec],
    empties: Sequence[EmptyPanoramic],
    bank: Sequence[ToothBankEntry],
    seed: int = 0,
    age_tolerance: int = 0,
    overlap_reject_iou: Optional[float] = None,
    threads: int = 1,
    prefix: str = "synth",
) -> SynthesisResult:
    """One image per spec; spec ``i`` uses a generator seeded by ``(seed, i)``.

    Specs that fail are reported in ``errors`` and the batch carries on.
    Successful images get consecutive ids starting at 1.
    """

    def run(i: int):
        # no warnings.catch_warnings here: it swaps global state and is not thread-safe
        try:
            img, prov = synthesize_panoramic(
                specs[i], empties, bank, np.random.default_rng([seed, i]), i + 1, age_tolerance, overlap_reject_iou
            )
            return img, prov, None
        except (ToothkitError, ValueError) as exc:
            return None, None, {"spec_index": i, "error": str(exc)}

    workers = threads if threads > 0 else (os.cpu_count() or 1)
    if workers == 1 or len(specs) < 2:
        outcomes = [run(i) for i in range(len(specs))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, range(len(specs))))

    images, names, provenance, errors = [], [], [], []
    overlap = 0
    for i, (img, prov, err) in enumerate(outcomes):
        if err is not None:
            log.warning("spec %d failed: %s", i, err["error"])
            errors.append(err)
            continue
        for skip in prov.skipped:
            log.warning("spec %d: tooth %d skipped (%s)", i, skip["tooth"], skip["reason"])
        new_id = len(images) + 1
        img = AnnotatedImage(new_id, img.pixels, img.annotations, img.patient_age)
        name = f"{prefix}_{new_id:05d}.png"
        images.append(img)
        names.append(name)
        pairs = overlapping_pairs([a.bbox for a in img.annotations])
        overlap += pairs
        provenance.append({"image_id": new_id, "file_name": name, "spec_index": i, "overlap_pairs": pairs, **prov.to_dict()})
    dataset = CocoDataset.from_annotated_images(images, names)
    return SynthesisResult(dataset, provenance, overlap, errors)


def bank_metadata(bank: Sequence[ToothBankEntry]) -> list[dict]:
    return [
        {
            "index": k,
            "tooth": e.tooth.code,
            "source_bbox": e.source_bbox.to_list(),
            "polygon": e.polygon.flat(),
            "source_image_id": e.source_image_id,
            "source_annotation_id": e.source_annotation_id,
            "source_age": e.source_age,
            "source_size": list(e.source_size),
        }
        for k, e in enumerate(bank)
    ]

