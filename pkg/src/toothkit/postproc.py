"""Rule-based correction of predictions.

The mouth is split into four sections by a vertical midline and the
occlusal line. As seen by the viewer (patient's right on the left):

    section 1 | section 2        FDI quadrant 1/5 | 2/6
    ----------+----------
    section 4 | section 3        FDI quadrant 4/8 | 3/7

A box center exactly on a line belongs to the left / upper side.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

from .types import BBox, Prediction


@dataclass(frozen=True)
class SectionGeometry:
    x_mid: float = 512.0
    y_mid: float = 512.0
    overrides: Mapping[int, tuple[float, float]] = field(default_factory=dict)
    # centers closer than this to either line are left uncorrected
    dead_zone: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "overrides", {int(k): (float(x), float(y)) for k, (x, y) in dict(self.overrides).items()})
        if self.dead_zone < 0:
            raise ValueError("dead_zone must be >= 0")
        for x, y in [(self.x_mid, self.y_mid), *self.overrides.values()]:
            if not (x > 0 and y > 0):
                raise ValueError(f"midlines must be positive, got ({x}, {y})")

    def lines_for(self, image_id: Optional[int]) -> tuple[float, float]:
        return self.overrides.get(image_id, (self.x_mid, self.y_mid))

    def check_image(self, image_id: int, width: int, height: int) -> None:
        x, y = self.lines_for(image_id)
        if not (0 < x < width and 0 < y < height):
            raise ValueError(f"midlines ({x}, {y}) fall outside the {width}x{height} image {image_id}")


def section_of(bbox: BBox, geo: SectionGeometry = SectionGeometry(), image_id: Optional[int] = None) -> int:
    cx, cy = bbox.center
    x_mid, y_mid = geo.lines_for(image_id)
    left, upper = cx <= x_mid, cy <= y_mid
    if upper:
        return 1 if left else 2
    return 4 if left else 3


def _in_dead_zone(p: Prediction, geo: SectionGeometry) -> bool:
    if geo.dead_zone <= 0:
        return False
    cx, cy = p.bbox.center
    x_mid, y_mid = geo.lines_for(p.image_id)
    return abs(cx - x_mid) < geo.dead_zone or abs(cy - y_mid) < geo.dead_zone


def quadrant_correct(p: Prediction, geo: SectionGeometry = SectionGeometry()) -> Prediction:
    """Set the quadrant digit from the section of the box center, keeping dentition."""
    if _in_dead_zone(p, geo):
        return p
    quadrant = section_of(p.bbox, geo, p.image_id) + (4 if p.tooth.deciduous else 0)
    if quadrant == p.tooth.quadrant:
        return p
    return replace(p, tooth=p.tooth.with_quadrant(quadrant))


def _keep_key(p: Prediction):
    # best first: highest score, then larger box, then lexicographically smallest box
    return (-p.score, -p.bbox.area, p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h)


def _survivors(preds: Sequence[Prediction]) -> set[int]:
    best: dict[tuple, int] = {}
    for k, p in enumerate(preds):
        key = (p.image_id, p.tooth)
        if key not in best or _keep_key(p) < _keep_key(preds[best[key]]):
            best[key] = k
    return set(best.values())


def suppress_duplicates(preds: Sequence[Prediction]) -> list[Prediction]:
    """Keep one prediction per (image, class): the highest scoring one."""
    keep = _survivors(preds)
    return [p for k, p in enumerate(preds) if k in keep]


def postprocess(
    preds: Sequence[Prediction], geo: SectionGeometry = SectionGeometry()
) -> tuple[list[Prediction], list[dict]]:
    """Quadrant correction followed by duplicate suppression.

    Returns the surviving predictions and a change log; indices in the log
    refer to positions in the input list.
    """
    log: list[dict] = []
    corrected = []
    for k, p in enumerate(preds):
        q = quadrant_correct(p, geo)
        if q.tooth != p.tooth:
            log.append({"index": k, "image_id": p.image_id, "action": "reclass", "from": p.tooth.code, "to": q.tooth.code})
        corrected.append(q)
    keep = _survivors(corrected)
    survivors = [p for k, p in enumerate(corrected) if k in keep]
    for k, p in enumerate(corrected):
        if k not in keep:
            log.append({"index": k, "image_id": p.image_id, "action": "remove", "class": p.tooth.code, "score": p.score})
    return survivors, log
