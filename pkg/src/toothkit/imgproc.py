"""Raster primitives for 8-bit grayscale panoramics.

Pixel ``(col, row)`` covers ``[col, col+1) x [row, row+1)`` and has its
center at ``(col + 0.5, row + 0.5)``. Affine maps act on these continuous
coordinates; resampling evaluates them at pixel centers.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import AnnotationDroppedWarning, ClipWarning, DegenerateMaskError, ValidationError
from .types import BBox, PolygonMask, ToothAnnotation, round_half_up


def to_uint8(values) -> np.ndarray:
    return np.clip(round_half_up(values), 0, 255).astype(np.uint8)


def _check_gray(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale raster, got shape {img.shape}")
    if img.size == 0:
        raise ValueError("empty image")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {img.dtype}")
    return img


# ------------------------------------------------------------ equalization


def equalize_histogram(img: np.ndarray) -> np.ndarray:
    """Global histogram equalization.

    Each level ``v`` becomes ``round((cdf(v) - cdf_min) / (N - cdf_min) * 255)``
    with ``cdf_min`` the count of the darkest present level. A constant image
    is returned unchanged (the formula is 0/0 there).
    """
    img = _check_gray(img)
    cdf = np.cumsum(np.bincount(img.ravel(), minlength=256)).astype(np.int64)
    n = int(img.size)
    cdf_min = int(cdf[cdf > 0][0])
    denom = n - cdf_min
    if denom == 0:
        return img.copy()
    # exact integer round-half-up of (cdf - cdf_min) * 255 / denom
    num = (cdf - cdf_min).clip(min=0) * 255
    lut = ((2 * num + denom) // (2 * denom)).astype(np.uint8)
    return lut[img]


# ------------------------------------------------------------ rasterization


def _edge_crossings(pts: np.ndarray, yc: float) -> np.ndarray:
    """x positions where the horizontal line ``y = yc`` crosses polygon edges.

    An edge counts when exactly one endpoint lies strictly below ``yc``
    (half-open rule), which makes shared vertices count once.
    """
    xi, yi = pts[:, 0], pts[:, 1]
    xj, yj = np.roll(xi, 1), np.roll(yi, 1)
    hit = (yi > yc) != (yj > yc)
    xi, yi, xj, yj = xi[hit], yi[hit], xj[hit], yj[hit]
    return np.sort((xj - xi) * (yc - yi) / (yj - yi) + xi)


def rasterize_window(poly: PolygonMask, col0: int, row0: int, width: int, height: int) -> np.ndarray:
    """Even-odd scanline fill of ``poly`` over the pixel window starting at (col0, row0).

    Returns a ``(height, width)`` bool array; may be all False.
    """
    pts = poly.as_array()
    mask = np.zeros((height, width), dtype=bool)
    if width <= 0 or height <= 0:
        return mask
    ymin, ymax = pts[:, 1].min(), pts[:, 1].max()
    r_lo = max(row0, int(math.floor(ymin - 0.5)))
    r_hi = min(row0 + height, int(math.ceil(ymax + 0.5)))
    xc = np.arange(col0, col0 + width, dtype=float) + 0.5
    for row in range(r_lo, r_hi):
        xs = _edge_crossings(pts, row + 0.5)
        if xs.size < 2:
            continue
        # a center is inside when an odd number of crossings lie strictly to its right
        right = xs.size - np.searchsorted(xs, xc, side="right")
        mask[row - row0] = (right % 2) == 1
    return mask


def rasterize_polygon(poly: PolygonMask, width: int, height: int) -> np.ndarray:
    """Binary mask of pixels whose centers fall inside ``poly`` (even-odd rule).

    Raises :class:`DegenerateMaskError` when no pixel is set.
    """
    mask = rasterize_window(poly, 0, 0, width, height)
    if not mask.any():
        raise DegenerateMaskError("polygon rasterizes to an empty mask")
    return mask


# ------------------------------------------------------------ affine maps


@dataclass(frozen=True)
class AffineMap:
    """``x' = a*x + b*y + c``, ``y' = d*x + e*y + f``."""

    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    e: float = 1.0
    f: float = 0.0

    def __post_init__(self):
        if self.determinant == 0 or not math.isfinite(self.determinant):
            raise ValueError("affine map is not invertible")

    @classmethod
    def identity(cls) -> "AffineMap":
        return cls()

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineMap":
        return cls(c=float(dx), f=float(dy))

    @classmethod
    def scaling(cls, sx: float, sy: Optional[float] = None) -> "AffineMap":
        return cls(a=float(sx), e=float(sx if sy is None else sy))

    @classmethod
    def rotation(cls, theta_deg: float, center: tuple[float, float]) -> "AffineMap":
        """Rotation by ``theta_deg`` about ``center`` (positive turns +x towards +y)."""
        t = math.radians(theta_deg)
        cos, sin = math.cos(t), math.sin(t)
        cx, cy = center
        return cls(cos, -sin, cx - cos * cx + sin * cy, sin, cos, cy - sin * cx - cos * cy)

    @classmethod
    def from_matrix(cls, m) -> "AffineMap":
        m = np.asarray(m, dtype=float)
        return cls(*m[0, :3], *m[1, :3])

    @property
    def determinant(self) -> float:
        return self.a * self.e - self.b * self.d

    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b, self.c], [self.d, self.e, self.f], [0.0, 0.0, 1.0]])

    def then(self, other: "AffineMap") -> "AffineMap":
        """Map that applies ``self`` first and ``other`` second."""
        return AffineMap.from_matrix(other.matrix() @ self.matrix())

    def inverse(self) -> "AffineMap":
        return AffineMap.from_matrix(np.linalg.inv(self.matrix()))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        x, y = pts[:, 0], pts[:, 1]
        return np.stack([self.a * x + self.b * y + self.c, self.d * x + self.e * y + self.f], axis=1)

    def apply_polygon(self, poly: PolygonMask) -> PolygonMask:
        return PolygonMask.from_array(self.apply(poly.as_array()))

    def apply_bbox(self, box: BBox) -> BBox:
        x1, y1, x2, y2 = box.xyxy()
        return BBox.bounds_of(self.apply([(x1, y1), (x2, y1), (x2, y2), (x1, y2)]))

    def to_list(self) -> list[list[float]]:
        return [[self.a, self.b, self.c], [self.d, self.e, self.f]]


def warp_affine(
    img: np.ndarray,
    amap: AffineMap,
    out_shape: tuple[int, int],
    fill: int = 0,
    mode: str = "constant",
) -> np.ndarray:
    """Bilinear resampling of ``img`` under ``amap`` (source -> destination)."""
    img = _check_gray(img)
    inv = amap.inverse()
    # destination index (r, c) -> continuous center -> source continuous -> source index
    matrix = np.array([[inv.e, inv.d], [inv.b, inv.a]])
    offset = np.array(
        [
            0.5 * inv.d + 0.5 * inv.e + inv.f - 0.5,
            0.5 * inv.a + 0.5 * inv.b + inv.c - 0.5,
        ]
    )
    out = ndimage.affine_transform(
        img.astype(float),
        matrix,
        offset=offset,
        output_shape=tuple(out_shape),
        order=1,
        mode=mode,
        cval=float(fill),
        prefilter=False,
    )
    return to_uint8(out)


# ------------------------------------------------------------ polygon clipping


def clip_polygon(poly: PolygonMask, width: float, height: float) -> Optional[PolygonMask]:
    """Sutherland-Hodgman clip against the canvas ``[0, width] x [0, height]``.

    Returns ``None`` when nothing with positive area remains.
    """
    pts = [tuple(v) for v in poly.vertices]

    def clip(points, inside, intersect):
        out = []
        for k, cur in enumerate(points):
            prev = points[k - 1]
            if inside(cur):
                if not inside(prev):
                    out.append(intersect(prev, cur))
                out.append(cur)
            elif inside(prev):
                out.append(intersect(prev, cur))
        return out

    def at_x(xb):
        return lambda p, q: (xb, p[1] + (q[1] - p[1]) * (xb - p[0]) / (q[0] - p[0]))

    def at_y(yb):
        return lambda p, q: (p[0] + (q[0] - p[0]) * (yb - p[1]) / (q[1] - p[1]), yb)

    for inside, intersect in (
        (lambda p: p[0] >= 0.0, at_x(0.0)),
        (lambda p: p[0] <= width, at_x(float(width))),
        (lambda p: p[1] >= 0.0, at_y(0.0)),
        (lambda p: p[1] <= height, at_y(float(height))),
    ):
        if not pts:
            return None
        pts = clip(pts, inside, intersect)
    dedup = []
    for p in pts:
        if not dedup or p != dedup[-1]:
            dedup.append(p)
    if len(dedup) > 1 and dedup[0] == dedup[-1]:
        dedup.pop()
    if len(dedup) < 3:
        return None
    clipped = PolygonMask(tuple(dedup))
    if clipped.area <= 1e-9:
        return None
    return clipped


def polygon_inside(poly: PolygonMask, width: float, height: float) -> bool:
    arr = poly.as_array()
    return bool((arr[:, 0] >= 0).all() and (arr[:, 1] >= 0).all() and (arr[:, 0] <= width).all() and (arr[:, 1] <= height).all())


def transform_annotations(
    anns: Sequence[ToothAnnotation], amap: AffineMap, width: int, height: int, map_bbox: bool = False
) -> list[ToothAnnotation]:
    """Map annotations through ``amap`` and clip them to the canvas.

    The bbox is rebuilt from the mapped polygon, or mapped corner by corner
    when ``map_bbox`` is set and the polygon needed no clipping. Annotations
    that end up fully off-canvas are dropped with a warning.
    """
    out = []
    for ann in anns:
        mapped = amap.apply_polygon(ann.mask)
        if polygon_inside(mapped, width, height):
            bbox = amap.apply_bbox(ann.bbox) if map_bbox else mapped.bounds()
            out.append(ToothAnnotation(ann.tooth, bbox, mapped))
            continue
        clipped = clip_polygon(mapped, width, height)
        if clipped is None:
            warnings.warn(f"tooth {ann.tooth} left the canvas and was dropped", AnnotationDroppedWarning, stacklevel=2)
            continue
        out.append(ToothAnnotation(ann.tooth, clipped.bounds(), clipped))
    return out


# ------------------------------------------------------------ crop / pad / resize


def default_roi(anns: Sequence[ToothAnnotation], width: int, height: int, margin: float = 0.1) -> BBox:
    """Union of annotation boxes grown by ``margin`` of its size per side, clamped to the image."""
    if not anns:
        return BBox(0, 0, width, height)
    x1 = min(a.bbox.x for a in anns)
    y1 = min(a.bbox.y for a in anns)
    x2 = max(a.bbox.x2 for a in anns)
    y2 = max(a.bbox.y2 for a in anns)
    mx, my = margin * (x2 - x1), margin * (y2 - y1)
    return BBox.from_xyxy(max(0.0, x1 - mx), max(0.0, y1 - my), min(float(width), x2 + mx), min(float(height), y2 + my))


def crop_pad_resize(
    img: np.ndarray,
    anns: Sequence[ToothAnnotation],
    roi: Optional[BBox] = None,
    size: int = 1024,
    margin: float = 0.1,
    pad_value: int = 0,
) -> tuple[np.ndarray, list[ToothAnnotation], AffineMap]:
    """Crop to ``roi``, pad to a centered square and resize to ``size`` x ``size``.

    Wide crops are padded top and bottom; tall crops left and right.
    Returns the new raster, remapped annotations and the composite map.
    """
    img = _check_gray(img)
    height, width = img.shape
    if roi is None:
        roi = default_roi(anns, width, height, margin)
    col0, row0, col1, row1 = roi.pixel_window()
    col0, row0 = max(col0, 0), max(row0, 0)
    col1, row1 = min(col1, width), min(row1, height)
    if col1 <= col0 or row1 <= row0:
        raise ValidationError(f"roi {roi.to_list()} does not intersect the {width}x{height} image")
    crop = img[row0:row1, col0:col1]
    ch, cw = crop.shape
    side = max(cw, ch)
    pad_x, pad_y = (side - cw) // 2, (side - ch) // 2
    scale = size / side

    amap = AffineMap.translation(pad_x - col0, pad_y - row0).then(AffineMap.scaling(scale))

    if side == size and pad_x == 0 and pad_y == 0:
        out = crop.copy()
    else:
        canvas = np.full((side, side), pad_value, dtype=np.uint8)
        canvas[pad_y:pad_y + ch, pad_x:pad_x + cw] = crop
        out = canvas if side == size else warp_affine(canvas, AffineMap.scaling(scale), (size, size), mode="nearest")
    new_anns = transform_annotations(anns, amap, size, size, map_bbox=True)
    return out, new_anns, amap


def preprocess_image(
    img: np.ndarray,
    anns: Sequence[ToothAnnotation],
    roi: Optional[BBox] = None,
    size: int = 1024,
    margin: float = 0.1,
    pad_value: int = 0,
    equalize: bool = True,
) -> tuple[np.ndarray, list[ToothAnnotation], AffineMap]:
    """Equalize, then crop around the teeth, pad and resize."""
    if equalize:
        img = equalize_histogram(img)
    return crop_pad_resize(img, anns, roi, size, margin, pad_value)


# ------------------------------------------------------------ compositing


def composite_tooth(dst: np.ndarray, tooth_pixels: np.ndarray, tooth_mask: np.ndarray, at: BBox) -> np.ndarray:
    """Paste ``tooth_pixels`` into a copy of ``dst`` wherever ``tooth_mask`` is set.

    The patch's top-left pixel lands on the pixel containing ``(at.x, at.y)``.
    Parts falling outside ``dst`` are clipped with a :class:`ClipWarning`.
    """
    dst = _check_gray(dst)
    tooth_pixels = np.asarray(tooth_pixels)
    tooth_mask = np.asarray(tooth_mask, dtype=bool)
    if tooth_pixels.shape != tooth_mask.shape:
        raise ValueError(f"tooth raster {tooth_pixels.shape} and mask {tooth_mask.shape} differ in size")
    out = dst.copy()
    col0, row0 = int(math.floor(at.x)), int(math.floor(at.y))
    ph, pw = tooth_mask.shape
    r0, r1 = max(row0, 0), min(row0 + ph, dst.shape[0])
    c0, c1 = max(col0, 0), min(col0 + pw, dst.shape[1])
    if (r0, r1, c0, c1) != (row0, row0 + ph, col0, col0 + pw):
        warnings.warn(f"composite at ({col0}, {row0}) clipped to the canvas", ClipWarning, stacklevel=2)
    if r1 <= r0 or c1 <= c0:
        return out
    sub_mask = tooth_mask[r0 - row0:r1 - row0, c0 - col0:c1 - col0]
    region = out[r0:r1, c0:c1]
    region[sub_mask] = tooth_pixels[r0 - row0:r1 - row0, c0 - col0:c1 - col0][sub_mask]
    return out
