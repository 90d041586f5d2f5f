"""Annotation-aware augmentation: contrast, noise, rotation, translation.

Two configurations (with and without translation) and two generation
strategies (fixed copy count, or more copies for images with deciduous teeth).
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import PurePosixPath
from typing import Sequence

import numpy as np

from .coco import CocoDataset
from .imgproc import AffineMap, to_uint8, transform_annotations, warp_affine
from .types import ToothAnnotation, round_half_up

STRATEGIES = ("uniform", "deciduous_priority")


@dataclass(frozen=True)
class AugmentConfig:
    rotation_range_deg: float = 10.0
    translation_range_frac: float = 0.05
    noise_sigma: float = 5.0
    contrast_range: tuple[float, float] = (0.8, 1.25)
    enable_translation: bool = False
    strategy: str = "uniform"
    copies_uniform: int = 5
    copies_deciduous: int = 5
    copies_other: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "contrast_range", tuple(float(g) for g in self.contrast_range))
        lo, hi = self.contrast_range
        if self.rotation_range_deg < 0 or self.translation_range_frac < 0 or self.noise_sigma < 0:
            raise ValueError("augmentation ranges must be non-negative")
        if not 0 < lo <= hi:
            raise ValueError(f"contrast gain interval must satisfy 0 < lo <= hi, got {self.contrast_range}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if min(self.copies_uniform, self.copies_deciduous, self.copies_other) < 0:
            raise ValueError("copy counts must be >= 0")

    def copies_for(self, anns: Sequence) -> int:
        if self.strategy == "uniform":
            return self.copies_uniform
        has_deciduous = any(a.tooth.deciduous for a in anns)
        return self.copies_deciduous if has_deciduous else self.copies_other


def rotation_map(theta_deg: float, width: int, height: int) -> AffineMap:
    # pivot at ((W-1)/2, (H-1)/2): on 1024^2, +90 deg sends (200, 200) to (823, 200)
    return AffineMap.rotation(theta_deg, ((width - 1) / 2.0, (height - 1) / 2.0))


def rotate_with_annotations(img: np.ndarray, anns: Sequence[ToothAnnotation], theta_deg: float):
    """Rotate raster and polygons about the image center; canvas size is kept."""
    if abs(theta_deg) > 45:
        raise ValueError(f"rotation of {theta_deg} deg is outside the +-45 deg sanity bound")
    if theta_deg == 0:
        return img.copy(), list(anns)
    h, w = img.shape
    amap = rotation_map(theta_deg, w, h)
    return warp_affine(img, amap, (h, w), fill=0), transform_annotations(anns, amap, w, h)


def translate_with_annotations(img: np.ndarray, anns: Sequence[ToothAnnotation], dx_frac: float, dy_frac: float):
    """Shift by a whole number of pixels; the vacated band is filled with 0."""
    if abs(dx_frac) > 0.5 or abs(dy_frac) > 0.5:
        raise ValueError("translation fractions must lie in [-0.5, 0.5]")
    h, w = img.shape
    dx = int(round_half_up(dx_frac * w))
    dy = int(round_half_up(dy_frac * h))
    if dx == 0 and dy == 0:
        return img.copy(), list(anns)
    out = np.zeros_like(img)
    src = img[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    out[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
    return out, transform_annotations(anns, AffineMap.translation(dx, dy), w, h)


def add_gaussian_noise(img: np.ndarray, sigma: float, seed=None) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return to_uint8(img.astype(float) + rng.normal(0.0, sigma, size=img.shape))


def adjust_contrast(img: np.ndarray, gain: float) -> np.ndarray:
    """``v' = clamp(round(128 + gain * (v - 128)))``."""
    if not gain > 0:
        raise ValueError("gain must be positive")
    if gain == 1:
        return img.copy()
    return to_uint8(128.0 + gain * (img.astype(float) - 128.0))


@dataclass(frozen=True)
class AugmentParams:
    gain: float
    theta_deg: float
    dx_frac: float
    dy_frac: float


def draw_params(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentParams:
    # fixed draw order keeps streams comparable between configurations
    gain = rng.uniform(*cfg.contrast_range)
    theta = rng.uniform(-cfg.rotation_range_deg, cfg.rotation_range_deg)
    dx = rng.uniform(-cfg.translation_range_frac, cfg.translation_range_frac)
    dy = rng.uniform(-cfg.translation_range_frac, cfg.translation_range_frac)
    if not cfg.enable_translation:
        dx = dy = 0.0
    return AugmentParams(float(gain), float(theta), float(dx), float(dy))


def augment_image(img: np.ndarray, anns: Sequence[ToothAnnotation], cfg: AugmentConfig, rng: np.random.Generator):
    """One augmented copy: contrast -> noise -> rotation -> translation."""
    p = draw_params(cfg, rng)
    out = adjust_contrast(img, p.gain)
    out = add_gaussian_noise(out, cfg.noise_sigma, rng)
    out, anns = rotate_with_annotations(out, anns, p.theta_deg)
    if cfg.enable_translation:
        out, anns = translate_with_annotations(out, anns, p.dx_frac, p.dy_frac)
    return out, anns, p


def _copy_name(file_name: str, k: int) -> str:
    path = PurePosixPath(file_name)
    return str(path.with_name(f"{path.stem}_aug{k}{path.suffix or '.png'}"))


def augment_dataset(d: CocoDataset, cfg: AugmentConfig, threads: int = 1) -> CocoDataset:
    """Append augmented copies of every image (pixels must be loaded).

    Copy ``k`` of image ``i`` draws from a generator seeded by
    ``(cfg.seed, i, k)``, so the result does not depend on ``threads``.
    New images get ids after the current maximum and ``_aug{k}`` file names.
    """
    by_image = d.annotations_by_image()
    jobs = []
    for img in d.images:
        if img.pixels is None:
            raise ValueError(f"image {img.id} has no pixels loaded")
        anns = [a.to_tooth_annotation() for a in by_image[img.id]]
        for k in range(cfg.copies_for(anns)):
            jobs.append((img, anns, k))

    def run(job):
        img, anns, k = job
        rng = np.random.default_rng([cfg.seed, img.id, k])
        pixels, new_anns, _ = augment_image(img.pixels, anns, cfg, rng)
        return pixels, new_anns

    workers = threads if threads > 0 else (os.cpu_count() or 1)
    if workers == 1 or len(jobs) < 2:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))

    next_img, _ = d.next_ids()
    items = []
    for (img, _, k), (pixels, new_anns) in zip(jobs, results):
        new = replace(img, id=next_img, file_name=_copy_name(img.file_name, k), pixels=pixels)
        items.append((new, new_anns))
        next_img += 1
    return d.with_annotated_images(items)
