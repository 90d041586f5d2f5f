"""Synthetic stand-in panoramics with anatomically ordered teeth.

Teeth sit in their FDI quadrant as seen on a radiograph: quadrant 1 upper
left of the viewer, 2 upper right, 3 lower right, 4 lower left, with the
midline and occlusal line through the image center. Tooth outlines are
16-gon ellipses whose extreme vertices touch the bounding box, so box and
polygon agree exactly.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .coco import CocoDataset, CocoImage
from .imgproc import rasterize_window, to_uint8
from .synth import EmptyPanoramic, PatientSpec
from .types import ALL_CLASSES, AnnotatedImage, BBox, PolygonMask, ToothAnnotation, ToothClass

SIDE_SIGN = {1: -1, 2: 1, 3: 1, 4: -1}  # -1: viewer's left
UPPER = {1: True, 2: True, 3: False, 4: False}


def tooth_box(tooth: ToothClass, size: int, jitter=(0.0, 0.0)) -> BBox:
    base_q = tooth.quadrant - 4 if tooth.deciduous else tooth.quadrant
    if tooth.deciduous:
        step, w, h, gap = 0.045, 0.034, 0.09, 0.010
    else:
        step, w = 0.05, 0.042
        h = 0.16 if tooth.position <= 3 else 0.13
        gap = 0.03
    cx = size / 2 + SIDE_SIGN[base_q] * (tooth.position - 0.5) * step * size + jitter[0]
    cy_edge = size / 2 + (-1 if UPPER[base_q] else 1) * gap * size + jitter[1]
    y = cy_edge - h * size if UPPER[base_q] else cy_edge
    return BBox(cx - w * size / 2, y, w * size, h * size)


def tooth_polygon(box: BBox, n: int = 16) -> PolygonMask:
    cx, cy = box.center
    rx, ry = box.w / 2, box.h / 2
    verts = []
    for k in range(n):
        t = 2 * math.pi * k / n
        if k % (n // 4) == 0:
            # exact extremes so the polygon bounds equal the box
            c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][k // (n // 4)]
        else:
            c, s = math.cos(t), math.sin(t)
        verts.append((cx + rx * c, cy + ry * s))
    return PolygonMask(tuple(verts))


def teeth_for_age(age: int, rng: np.random.Generator, agenesis: float = 0.08) -> list[ToothClass]:
    """Plausible set of visible teeth for a patient, with random agenesis."""
    present = []
    for t in ALL_CLASSES:
        if t.deciduous:
            keep = age < 6 or (age <= 11 and t.position > age - 7)
        else:
            keep = age >= 6 or t.position in (1, 2, 6)
            if t.position == 8:
                keep = age >= 12 and rng.random() < 0.6
        if keep and rng.random() >= agenesis:
            present.append(t)
    return present


def background(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = 45 + 35 * np.exp(-((xx - 0.5) ** 2 / 0.08 + (yy - 0.5) ** 2 / 0.04))
    base += 10 * yy + rng.normal(0, 3, size=(size, size))
    return to_uint8(base)


def draw_teeth(canvas: np.ndarray, anns: Sequence[ToothAnnotation], rng: np.random.Generator) -> np.ndarray:
    out = canvas.copy()
    height, width = out.shape
    for ann in anns:
        c0, r0, c1, r1 = ann.bbox.pixel_window()
        c0, r0, c1, r1 = max(c0, 0), max(r0, 0), min(c1, width), min(r1, height)
        mask = rasterize_window(ann.mask, c0, r0, c1 - c0, r1 - r0)
        level = rng.uniform(165, 215)
        ramp = np.linspace(-12, 12, r1 - r0)[:, None]
        region = out[r0:r1, c0:c1]
        region[mask] = to_uint8(level + ramp + np.zeros((1, c1 - c0)))[mask]
    return out


def make_annotations(teeth: Sequence[ToothClass], size: int, rng: np.random.Generator, jitter: float = 0.004) -> list[ToothAnnotation]:
    anns = []
    for t in sorted(teeth):
        j = tuple(rng.uniform(-jitter, jitter, size=2) * size)
        box = tooth_box(t, size, j)
        anns.append(ToothAnnotation(t, box, tooth_polygon(box)))
    return anns


def make_panoramic(
    image_id: int,
    size: int = 1024,
    seed=0,
    age: Optional[int] = None,
    teeth: Optional[Sequence[ToothClass]] = None,
    with_pixels: bool = True,
) -> AnnotatedImage:
    rng = np.random.default_rng(seed)
    if age is None:
        age = int(rng.integers(4, 18))
    if teeth is None:
        teeth = teeth_for_age(age, rng)
    anns = make_annotations(teeth, size, rng)
    if with_pixels:
        pixels = draw_teeth(background(size, rng), anns, rng)
    else:
        pixels = np.zeros((size, size), dtype=np.uint8)
    return AnnotatedImage(image_id, pixels, tuple(anns), age)


def make_dataset(
    n_images: int,
    seed: int = 0,
    size: int = 1024,
    with_pixels: bool = True,
    ages: Optional[Sequence[int]] = None,
    every_class: bool = False,
) -> CocoDataset:
    """``n_images`` phantom panoramics; ``every_class`` adds one full-dentition image per dentition."""
    items = []
    for i in range(n_images):
        age = None if ages is None else ages[i % len(ages)]
        items.append(make_panoramic(i + 1, size, [seed, i], age, with_pixels=with_pixels))
    if every_class:
        deciduous = [t for t in ALL_CLASSES if t.deciduous]
        permanent = [t for t in ALL_CLASSES if not t.deciduous]
        for teeth, age in ((permanent, 16), (deciduous, 4)):
            k = len(items) + 1
            items.append(make_panoramic(k, size, [seed, k, 7], age, teeth, with_pixels))
    d = CocoDataset.from_annotated_images(items, [f"phantom_{it.id:04d}.png" for it in items])
    if not with_pixels:
        d = CocoDataset(tuple(CocoImage(i.id, i.file_name, i.width, i.height, i.age) for i in d.images), d.annotations)
    return d


def make_empties(n: int, seed: int = 0, size: int = 1024, ages: Optional[Sequence[int]] = None) -> list[EmptyPanoramic]:
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, i, 99])
        age = int(rng.integers(4, 18)) if ages is None else ages[i % len(ages)]
        out.append(EmptyPanoramic(f"empty_{i:03d}", background(size, rng), age))
    return out


def make_specs(n: int, seed: int = 0, n_teeth: Optional[int] = None) -> list[PatientSpec]:
    """Random patient specs; with ``n_teeth`` every spec asks for exactly that many teeth."""
    specs = []
    for i in range(n):
        rng = np.random.default_rng([seed, i, 5])
        age = int(rng.integers(4, 18))
        if n_teeth is None:
            teeth = teeth_for_age(age, rng)
        else:
            teeth = [ALL_CLASSES[k] for k in rng.choice(len(ALL_CLASSES), size=n_teeth, replace=False)]
        specs.append(PatientSpec(frozenset(teeth), age))
    return specs


def random_image(shape, seed=0) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 256, size=shape, dtype=np.uint8)
