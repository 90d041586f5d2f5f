"""Box/mask overlap metrics, exact assignment, and DETR-style set matching.

Class-probability vectors have 53 entries: the 52 tooth classes in
:data:`toothkit.types.ALL_CLASSES` order followed by "no object".
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .imgproc import rasterize_window
from .types import ALL_CLASSES, NO_OBJECT, BBox, ToothAnnotation

N_OUTPUTS = len(ALL_CLASSES) + 1


def _intersection(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    return iw * ih if iw > 0 and ih > 0 else 0.0


def _edge_area(b: BBox) -> float:
    # measured from the corners, like the intersection, so identical boxes give IoU exactly 1
    return (b.x2 - b.x) * (b.y2 - b.y)


def iou(a: BBox, b: BBox) -> float:
    inter = _intersection(a, b)
    return inter / (_edge_area(a) + _edge_area(b) - inter)


def giou(a: BBox, b: BBox) -> float:
    """Generalized IoU: IoU minus the empty fraction of the enclosing box."""
    inter = _intersection(a, b)
    union = _edge_area(a) + _edge_area(b) - inter
    hull = (max(a.x2, b.x2) - min(a.x, b.x)) * (max(a.y2, b.y2) - min(a.y, b.y))
    return inter / union - (hull - union) / hull


def _size_pair(image_size) -> tuple[float, float]:
    if np.isscalar(image_size):
        return float(image_size), float(image_size)
    w, h = image_size
    return float(w), float(h)


def l1_box(a: BBox, b: BBox, image_size) -> float:
    """Sum of absolute (cx, cy, w, h) differences, normalized by image width/height."""
    iw, ih = _size_pair(image_size)
    (acx, acy), (bcx, bcy) = a.center, b.center
    return abs(acx - bcx) / iw + abs(acy - bcy) / ih + abs(a.w - b.w) / iw + abs(a.h - b.h) / ih


def dice(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    mask_a = np.asarray(mask_a, dtype=bool)
    mask_b = np.asarray(mask_b, dtype=bool)
    if mask_a.shape != mask_b.shape:
        raise ValueError(f"mask shapes differ: {mask_a.shape} vs {mask_b.shape}")
    total = int(mask_a.sum()) + int(mask_b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(mask_a, mask_b).sum()) / total


# ------------------------------------------------------------ assignment


def hungarian_assign(cost) -> np.ndarray:
    """Exact minimum-cost assignment of a square matrix.

    Shortest augmenting paths with dual potentials, O(n^3). Returns
    ``cols`` such that row ``i`` is assigned column ``cols[i]``.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {c.shape}")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix must be finite")
    n = c.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int)
    # 1-based columns; column 0 is the virtual source of each augmentation
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of = np.zeros(n + 1, dtype=int)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        row_of[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            free = ~used
            free[0] = False
            reduced = c[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.flatnonzero(free)
            j1 = int(candidates[np.argmin(minv[candidates])])
            delta = minv[j1]
            u[row_of[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if row_of[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1
    cols = np.empty(n, dtype=int)
    cols[row_of[1:] - 1] = np.arange(n)
    return cols


def assignment_cost(cost, cols) -> float:
    c = np.asarray(cost, dtype=float)
    return float(sum(c[i, j] for i, j in enumerate(cols)))


# ------------------------------------------------------------ DETR matching


@dataclass(frozen=True)
class LossWeights:
    w_class: float = 1.0
    w_l1: float = 5.0
    w_giou: float = 2.0
    w_dice: float = 1.0

    def __post_init__(self):
        values = (self.w_class, self.w_l1, self.w_giou, self.w_dice)
        if any(w < 0 for w in values) or not any(values):
            raise ValueError("loss weights must be non-negative and not all zero")


@dataclass(frozen=True)
class SlotOutput:
    """One decoder output slot: class probabilities, a box and an optional mask."""

    probs: np.ndarray
    bbox: BBox
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (N_OUTPUTS,):
            raise ValueError(f"probability vector must have {N_OUTPUTS} entries")
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError("probability vector must be non-negative and sum to 1")
        object.__setattr__(self, "probs", probs)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True)
class SetMatch:
    cols: tuple[int, ...]
    cost: np.ndarray
    n_gt: int

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """``(slot, gt)`` for every slot matched to a real ground-truth object."""
        return [(i, j) for i, j in enumerate(self.cols) if j < self.n_gt]

    @property
    def unmatched_slots(self) -> list[int]:
        return [i for i, j in enumerate(self.cols) if j >= self.n_gt]

    @property
    def total_cost(self) -> float:
        return assignment_cost(self.cost, self.cols)


def matching_cost(
    slots: Sequence[SlotOutput], gts: Sequence[ToothAnnotation], weights: LossWeights, image_size
) -> np.ndarray:
    n, g = len(slots), len(gts)
    if n < g:
        raise ValueError(f"{n} output slots cannot cover {g} ground-truth objects")
    cost = np.zeros((n, n))
    for i, slot in enumerate(slots):
        for j, gt in enumerate(gts):
            cost[i, j] = (
                -weights.w_class * slot.probs[gt.tooth.index]
                + weights.w_l1 * l1_box(slot.bbox, gt.bbox, image_size)
                + weights.w_giou * (1.0 - giou(slot.bbox, gt.bbox))
            )
    return cost


def detr_match(
    slots: Sequence[SlotOutput],
    gts: Sequence[ToothAnnotation],
    weights: LossWeights = LossWeights(),
    image_size=1024,
) -> SetMatch:
    """Optimal slot/object matching with ground truth padded by "no object" columns."""
    cost = matching_cost(slots, gts, weights, image_size)
    return SetMatch(tuple(int(j) for j in hungarian_assign(cost)), cost, len(gts))


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    classification: float
    l1: float
    giou: float
    dice: float
    match: SetMatch

    @property
    def finite(self) -> bool:
        return math.isfinite(self.total)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "classification": self.classification,
            "l1": self.l1,
            "giou": self.giou,
            "dice": self.dice,
            "pairs": [list(p) for p in self.match.pairs],
        }


def _nll(p: float) -> float:
    return math.inf if p <= 0.0 else -math.log(p)


def hungarian_loss(
    slots: Sequence[SlotOutput],
    gts: Sequence[ToothAnnotation],
    weights: LossWeights = LossWeights(),
    image_size=1024,
) -> LossBreakdown:
    """Set loss under the optimal matching, with weighted per-term subtotals.

    Slots without a mask skip the Dice term (detection-only training). A
    zero probability on a required class yields an infinite total rather
    than an exception; check :attr:`LossBreakdown.finite`.
    """
    match = detr_match(slots, gts, weights, image_size)
    width, height = (int(round(s)) for s in _size_pair(image_size))
    cls_term = l1_term = giou_term = dice_term = 0.0
    for i, j in match.pairs:
        slot, gt = slots[i], gts[j]
        cls_term += _nll(slot.probs[gt.tooth.index])
        l1_term += l1_box(slot.bbox, gt.bbox, image_size)
        giou_term += 1.0 - giou(slot.bbox, gt.bbox)
        if slot.mask is not None:
            gt_mask = rasterize_window(gt.mask, 0, 0, width, height)
            dice_term += 1.0 - dice(slot.mask, gt_mask)
    for i in match.unmatched_slots:
        cls_term += _nll(slots[i].probs[NO_OBJECT])

    def weighted(w: float, term: float) -> float:
        return 0.0 if w == 0.0 else w * term

    parts = (
        weighted(weights.w_class, cls_term),
        weighted(weights.w_l1, l1_term),
        weighted(weights.w_giou, giou_term),
        weighted(weights.w_dice, dice_term),
    )
    return LossBreakdown(sum(parts), *parts, match)
