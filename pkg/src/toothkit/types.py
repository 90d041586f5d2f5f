"""Domain vocabulary: FDI tooth classes, boxes, polygons, annotations, predictions.

All types are frozen dataclasses. Coordinates are pixels with the origin at
the top-left corner and y pointing down; a pixel ``(col, row)`` covers the
square ``[col, col + 1) x [row, row + 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

PERMANENT_QUADRANTS = (1, 2, 3, 4)
DECIDUOUS_QUADRANTS = (5, 6, 7, 8)

# arch pairs share a jaw: 1/2 upper, 3/4 lower (and +4 for deciduous)
_MIRROR_QUADRANT = {1: 2, 2: 1, 3: 4, 4: 3, 5: 6, 6: 5, 7: 8, 8: 7}


def _is_valid_code(code: int) -> bool:
    quadrant, position = divmod(code, 10)
    if quadrant in PERMANENT_QUADRANTS:
        return 1 <= position <= 8
    if quadrant in DECIDUOUS_QUADRANTS:
        return 1 <= position <= 5
    return False


@dataclass(frozen=True, order=True)
class ToothClass:
    """One of the 52 FDI (ISO 3950) tooth codes, e.g. ``ToothClass(24)``."""

    code: int

    def __post_init__(self):
        if isinstance(self.code, bool) or not isinstance(self.code, (int, np.integer)):
            raise ValueError(f"tooth code must be an integer, got {self.code!r}")
        if not _is_valid_code(int(self.code)):
            raise ValueError(f"{self.code} is not a valid FDI tooth code")
        object.__setattr__(self, "code", int(self.code))

    @property
    def quadrant(self) -> int:
        return self.code // 10

    @property
    def position(self) -> int:
        return self.code % 10

    @property
    def deciduous(self) -> bool:
        return self.quadrant in DECIDUOUS_QUADRANTS

    @property
    def index(self) -> int:
        """Position of this class in :data:`ALL_CLASSES` (0..51)."""
        return CLASS_INDEX[self.code]

    def with_quadrant(self, quadrant: int) -> "ToothClass":
        return ToothClass(quadrant * 10 + self.position)

    def __int__(self) -> int:
        return self.code

    def __str__(self) -> str:
        return str(self.code)


ALL_CLASSES: tuple[ToothClass, ...] = tuple(
    ToothClass(q * 10 + p)
    for q in PERMANENT_QUADRANTS + DECIDUOUS_QUADRANTS
    for p in range(1, 9 if q in PERMANENT_QUADRANTS else 6)
)
CLASS_INDEX: dict[int, int] = {t.code: i for i, t in enumerate(ALL_CLASSES)}
# index of the extra "no-object" / background entry in class vectors
NO_OBJECT = len(ALL_CLASSES)


def as_tooth(value) -> ToothClass:
    return value if isinstance(value, ToothClass) else ToothClass(value)


def mirror_class(t: ToothClass) -> ToothClass:
    """Swap the left/right quadrant of a tooth within its arch (24 -> 14)."""
    t = as_tooth(t)
    return t.with_quadrant(_MIRROR_QUADRANT[t.quadrant])


def dentition_counterpart(t: ToothClass) -> Optional[ToothClass]:
    """Deciduous tooth <-> permanent successor at the same position.

    Permanent molars at positions 6-8 have no deciduous predecessor and
    map to ``None``.
    """
    t = as_tooth(t)
    if t.deciduous:
        return ToothClass(t.code - 40)
    if t.position <= 5:
        return ToothClass(t.code + 40)
    return None


def round_half_up(x):
    """Round to nearest integer, halves towards +inf. Works on scalars and arrays."""
    return np.floor(np.asarray(x, dtype=float) + 0.5)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box ``(x, y, w, h)`` in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"bbox {name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"bbox must have positive size, got w={self.w} h={self.h}")

    @classmethod
    def from_xyxy(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls(x1, y1, x2 - x1, y2 - y1)

    @classmethod
    def bounds_of(cls, points) -> "BBox":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        x1, y1 = pts.min(axis=0)
        x2, y2 = pts.max(axis=0)
        return cls.from_xyxy(float(x1), float(y1), float(x2), float(y2))

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def xyxy(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x2, self.y2)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def pixel_window(self) -> tuple[int, int, int, int]:
        """Integer pixel window ``(col0, row0, col1, row1)`` covering the box."""
        return (
            int(math.floor(self.x)),
            int(math.floor(self.y)),
            int(math.ceil(self.x2)),
            int(math.ceil(self.y2)),
        )

    def close_to(self, other: "BBox", tol: float = 1.0) -> bool:
        """True when every edge of the two boxes differs by at most ``tol``."""
        return all(abs(a - b) <= tol for a, b in zip(self.xyxy(), other.xyxy()))


def shoelace_area(points) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


@dataclass(frozen=True)
class PolygonMask:
    """Closed polygon given as an ordered sequence of ``(x, y)`` vertices."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValueError(f"polygon needs at least 3 vertices, got {len(verts)}")
        if not all(math.isfinite(c) for v in verts for c in v):
            raise ValueError("polygon vertices must be finite")
        object.__setattr__(self, "vertices", verts)

    @classmethod
    def from_flat(cls, coords: Sequence[float]) -> "PolygonMask":
        if len(coords) % 2:
            raise ValueError("flat polygon needs an even number of coordinates")
        it = iter(coords)
        return cls(tuple(zip(it, it)))

    @classmethod
    def from_array(cls, arr) -> "PolygonMask":
        return cls(tuple(map(tuple, np.asarray(arr, dtype=float).reshape(-1, 2))))

    def flat(self) -> list[float]:
        return [c for v in self.vertices for c in v]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    @property
    def area(self) -> float:
        return shoelace_area(self.vertices)

    def bounds(self) -> BBox:
        return BBox.bounds_of(self.vertices)

    def translated(self, dx: float, dy: float) -> "PolygonMask":
        return PolygonMask(tuple((x + dx, y + dy) for x, y in self.vertices))


@dataclass(frozen=True)
class ToothAnnotation:
    tooth: ToothClass
    bbox: BBox
    mask: PolygonMask

    def __post_init__(self):
        object.__setattr__(self, "tooth", as_tooth(self.tooth))
        if not self.bbox.close_to(self.mask.bounds()):
            raise ValueError(
                f"bbox {self.bbox.to_list()} disagrees with polygon bounds "
                f"{self.mask.bounds().to_list()} by more than 1 px"
            )

    @classmethod
    def from_polygon(cls, tooth, mask: PolygonMask) -> "ToothAnnotation":
        return cls(as_tooth(tooth), mask.bounds(), mask)


@dataclass(frozen=True)
class AnnotatedImage:
    """Grayscale radiograph plus its tooth annotations."""

    id: int
    pixels: np.ndarray = field(compare=False, repr=False)
    annotations: tuple[ToothAnnotation, ...] = ()
    patient_age: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2 or pixels.dtype != np.uint8:
            raise ValueError("pixels must be a 2-D uint8 array")
        object.__setattr__(self, "pixels", pixels)
        check_unique_classes(a.tooth for a in self.annotations)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


def check_unique_classes(teeth: Iterable[ToothClass]) -> None:
    seen = set()
    for t in teeth:
        if t in seen:
            raise ValueError(f"tooth {t} annotated more than once in one image")
        seen.add(t)


@dataclass(frozen=True)
class Prediction:
    image_id: int
    tooth: ToothClass
    bbox: BBox
    score: float
    mask: Optional[PolygonMask] = None

    def __post_init__(self):
        object.__setattr__(self, "tooth", as_tooth(self.tooth))
        score = float(self.score)
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {score}")
        object.__setattr__(self, "score", score)
