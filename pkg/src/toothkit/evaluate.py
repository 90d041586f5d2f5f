"""Scoring prediction files against COCO ground truth.

* mAP at a single IoU threshold, all-point interpolation, per-class greedy
  matching in descending score order.
* detection accuracy: share of ground-truth teeth matched by some
  prediction (class ignored) at IoU >= threshold.
* classification accuracy: share of those matches whose class is right.
* a 53 x 53 confusion matrix (row = truth, column = prediction, the last
  index standing for "missed" / "background") with each off-diagonal cell
  tagged as a detection, deciduous, symmetric or other error.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .coco import CocoAnnotation, CocoDataset
from .errors import ValidationError
from .imgproc import rasterize_window
from .matching import hungarian_assign, iou
from .types import ALL_CLASSES, NO_OBJECT, Prediction, ToothClass, dentition_counterpart, mirror_class

ERROR_KINDS = ("detection", "deciduous", "symmetric", "other")
IOU_MODES = ("bbox", "mask")


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    iou_mode: str = "bbox"
    score_floor: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError("iou_threshold must lie in (0, 1)")
        if self.iou_mode not in IOU_MODES:
            raise ValueError(f"iou_mode must be one of {IOU_MODES}")


# ------------------------------------------------------------ overlaps


def mask_iou(pred: Prediction, gt: CocoAnnotation, width: int, height: int) -> float:
    """IoU of the rasterized polygons; a prediction without a mask scores 0."""
    if pred.mask is None or iou(pred.bbox, gt.bbox) == 0.0:
        return 0.0
    a0, b0, a1, b1 = pred.bbox.pixel_window()
    c0, d0, c1, d1 = gt.bbox.pixel_window()
    col0, row0 = max(min(a0, c0), 0), max(min(b0, d0), 0)
    col1, row1 = min(max(a1, c1), width), min(max(b1, d1), height)
    if col1 <= col0 or row1 <= row0:
        return 0.0
    ma = rasterize_window(pred.mask, col0, row0, col1 - col0, row1 - row0)
    mb = rasterize_window(gt.polygon, col0, row0, col1 - col0, row1 - row0)
    union = int(np.logical_or(ma, mb).sum())
    return int(np.logical_and(ma, mb).sum()) / union if union else 0.0


def pair_iou(pred: Prediction, gt: CocoAnnotation, cfg: EvalConfig, image_size=(1024, 1024)) -> float:
    if cfg.iou_mode == "bbox":
        return iou(pred.bbox, gt.bbox)
    return mask_iou(pred, gt, *image_size)


def _rank_key(p: Prediction):
    return (-p.score, p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h, p.tooth.code, p.image_id)


# ------------------------------------------------------------ greedy matching


@dataclass(frozen=True)
class GreedyResult:
    """Greedy matches for one image; indices refer to the input lists."""

    matches: tuple[tuple[int, Optional[int]], ...]  # (prediction, gt or None), in rank order
    missed: tuple[int, ...]

    @property
    def tp(self) -> int:
        return sum(1 for _, g in self.matches if g is not None)

    @property
    def fp(self) -> int:
        return sum(1 for _, g in self.matches if g is None)

    @property
    def fn(self) -> int:
        return len(self.missed)


def match_greedy(
    preds: Sequence[Prediction], gts: Sequence[CocoAnnotation], cfg: EvalConfig = EvalConfig(), image_size=(1024, 1024)
) -> GreedyResult:
    """Per-class greedy matching for a single image.

    Predictions are visited by descending score; each takes the unmatched
    same-class ground truth with the highest IoU (ties: lower annotation id)
    and is a true positive if that IoU reaches the threshold.
    """
    order = sorted(range(len(preds)), key=lambda k: _rank_key(preds[k]))
    taken: set[int] = set()
    matches = []
    for k in order:
        p = preds[k]
        best, best_iou = None, -1.0
        for j, g in enumerate(gts):
            if j in taken or g.tooth != p.tooth:
                continue
            v = pair_iou(p, g, cfg, image_size)
            if v > best_iou or (v == best_iou and best is not None and g.id < gts[best].id):
                best, best_iou = j, v
        if best is not None and best_iou >= cfg.iou_threshold:
            taken.add(best)
            matches.append((k, best))
        else:
            matches.append((k, None))
    missed = tuple(j for j in range(len(gts)) if j not in taken)
    return GreedyResult(tuple(matches), missed)


def ap_from_ranked(tp_flags: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP of a ranked list of TP/FP flags."""
    if n_gt <= 0:
        raise ValueError("AP is undefined without ground truth")
    tp = np.cumsum(np.asarray(tp_flags, dtype=float))
    fp = np.cumsum(~np.asarray(tp_flags, dtype=bool))
    if tp.size == 0:
        return 0.0
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # precision envelope: max precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def _group(d: CocoDataset, preds: Sequence[Prediction], cfg: EvalConfig):
    known = {img.id for img in d.images}
    by_image: dict[int, list[Prediction]] = {i: [] for i in known}
    for p in preds:
        if p.image_id not in known:
            raise ValidationError(f"prediction refers to unknown image_id {p.image_id}", f"image {p.image_id}")
        if p.score >= cfg.score_floor:
            by_image[p.image_id].append(p)
    return by_image, d.annotations_by_image()


def _class_ranked_flags(d, by_image, gts_by_image, cfg) -> dict[ToothClass, list[tuple[tuple, bool]]]:
    ranked: dict[ToothClass, list[tuple[tuple, bool]]] = {}
    for img in d.images:
        preds = by_image[img.id]
        res = match_greedy(preds, gts_by_image[img.id], cfg, (img.width, img.height))
        for k, g in res.matches:
            ranked.setdefault(preds[k].tooth, []).append((_rank_key(preds[k]), g is not None))
    return ranked


def average_precision(
    preds: Sequence[Prediction], gt: CocoDataset, tooth, cfg: EvalConfig = EvalConfig()
) -> Optional[float]:
    """AP of one class over the whole dataset, or ``None`` when it has no ground truth."""
    tooth = tooth if isinstance(tooth, ToothClass) else ToothClass(tooth)
    n_gt = sum(1 for a in gt.annotations if a.tooth == tooth)
    if n_gt == 0:
        return None
    by_image, gts_by_image = _group(gt, [p for p in preds if p.tooth == tooth], cfg)
    ranked = _class_ranked_flags(gt, by_image, gts_by_image, cfg).get(tooth, [])
    ranked.sort(key=lambda r: r[0])
    return ap_from_ranked([flag for _, flag in ranked], n_gt)


# ------------------------------------------------------------ class-agnostic matching


def match_any_class(
    preds: Sequence[Prediction], gts: Sequence[CocoAnnotation], cfg: EvalConfig = EvalConfig(), image_size=(1024, 1024)
) -> list[tuple[int, int]]:
    """Maximum-total-IoU one-to-one matching ignoring classes; pairs below threshold are forbidden."""
    n_p, n_g = len(preds), len(gts)
    if n_p == 0 or n_g == 0:
        return []
    k = max(n_p, n_g)
    cost = np.zeros((k, k))
    ious = np.zeros((n_p, n_g))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            ious[i, j] = pair_iou(p, g, cfg, image_size)
    allowed = ious >= cfg.iou_threshold
    cost[:n_p, :n_g] = np.where(allowed, -ious, 0.0)
    cols = hungarian_assign(cost)
    return [(i, int(j)) for i, j in enumerate(cols) if i < n_p and j < n_g and allowed[i, j]]


def error_kind(true_index: int, pred_index: int) -> Optional[str]:
    """Taxonomy of a confusion cell; ``None`` on the diagonal."""
    if true_index == pred_index:
        return None
    if true_index == NO_OBJECT or pred_index == NO_OBJECT:
        return "detection"
    t, p = ALL_CLASSES[true_index], ALL_CLASSES[pred_index]
    if dentition_counterpart(t) == p:
        return "deciduous"
    if mirror_class(t) == p:
        return "symmetric"
    return "other"


# ------------------------------------------------------------ report


@dataclass
class EvalReport:
    per_class_ap: dict[int, float]
    mAP: float
    detection_accuracy: float
    classification_accuracy: float
    confusion: np.ndarray
    error_counts: dict[str, int]
    counts: dict[str, int] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mAP": self.mAP,
            "detection_accuracy": self.detection_accuracy,
            "classification_accuracy": self.classification_accuracy,
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "error_counts": {k: int(self.error_counts[k]) for k in ERROR_KINDS},
            "counts": dict(self.counts),
            "config": dict(self.config),
            "labels": [t.code for t in ALL_CLASSES] + ["none"],
            "confusion": self.confusion.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(
            per_class_ap={int(k): float(v) for k, v in data["per_class_ap"].items()},
            mAP=float(data["mAP"]),
            detection_accuracy=float(data["detection_accuracy"]),
            classification_accuracy=float(data["classification_accuracy"]),
            confusion=np.asarray(data["confusion"], dtype=np.int64),
            error_counts={k: int(data["error_counts"][k]) for k in ERROR_KINDS},
            counts=dict(data.get("counts", {})),
            config=dict(data.get("config", {})),
        )

    def render(self) -> str:
        lines = [
            f"{'metric':<26}{'value':>10}",
            f"{'mAP (IoU ' + format(self.config.get('iou_threshold', 0.5), 'g') + ')':<26}{self.mAP:>10.4f}",
            f"{'detection accuracy':<26}{self.detection_accuracy:>10.4f}",
            f"{'classification accuracy':<26}{self.classification_accuracy:>10.4f}",
        ]
        lines += [f"{'errors: ' + kind:<26}{self.error_counts[kind]:>10d}" for kind in ERROR_KINDS]
        lines.append("")
        lines.append(f"{'class':<8}{'AP':>8}")
        lines += [f"{code:<8}{ap:>8.4f}" for code, ap in sorted(self.per_class_ap.items())]
        return "\n".join(lines) + "\n"

    def confusion_csv(self) -> str:
        labels = [str(t.code) for t in ALL_CLASSES] + ["none"]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["true\\pred"] + labels)
        for label, row in zip(labels, self.confusion.astype(int).tolist()):
            writer.writerow([label] + row)
        return buf.getvalue()


def evaluate(preds: Sequence[Prediction], gt: CocoDataset, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    if not gt.annotations:
        raise ValidationError("ground truth holds no annotations")
    by_image, gts_by_image = _group(gt, preds, cfg)

    ranked = _class_ranked_flags(gt, by_image, gts_by_image, cfg)
    n_gt_class: dict[ToothClass, int] = {}
    for a in gt.annotations:
        n_gt_class[a.tooth] = n_gt_class.get(a.tooth, 0) + 1
    per_class_ap = {}
    for tooth in sorted(n_gt_class):
        flags = sorted(ranked.get(tooth, []), key=lambda r: r[0])
        per_class_ap[tooth.code] = ap_from_ranked([f for _, f in flags], n_gt_class[tooth])
    mean_ap = float(np.mean(list(per_class_ap.values())))

    size = len(ALL_CLASSES) + 1
    confusion = np.zeros((size, size), dtype=np.int64)
    matched = correct = 0
    tp = fp = 0
    for img in gt.images:
        preds_i, gts_i = by_image[img.id], gts_by_image[img.id]
        pairs = match_any_class(preds_i, gts_i, cfg, (img.width, img.height))
        used_p = {i for i, _ in pairs}
        used_g = {j for _, j in pairs}
        for i, j in pairs:
            confusion[gts_i[j].tooth.index, preds_i[i].tooth.index] += 1
            correct += preds_i[i].tooth == gts_i[j].tooth
        matched += len(pairs)
        for j, g in enumerate(gts_i):
            if j not in used_g:
                confusion[g.tooth.index, NO_OBJECT] += 1
        for i, p in enumerate(preds_i):
            if i not in used_p:
                confusion[NO_OBJECT, p.tooth.index] += 1
        greedy = match_greedy(preds_i, gts_i, cfg, (img.width, img.height))
        tp += greedy.tp
        fp += greedy.fp

    errors = {k: 0 for k in ERROR_KINDS}
    for r, c in zip(*np.nonzero(confusion)):
        kind = error_kind(int(r), int(c))
        if kind:
            errors[kind] += int(confusion[r, c])

    n_gt = len(gt.annotations)
    return EvalReport(
        per_class_ap=per_class_ap,
        mAP=mean_ap,
        detection_accuracy=matched / n_gt,
        classification_accuracy=correct / matched if matched else 0.0,
        confusion=confusion,
        error_counts=errors,
        counts={
            "ground_truth": n_gt,
            "predictions": sum(len(v) for v in by_image.values()),
            "true_positives": tp,
            "false_positives": fp,
            "false_negatives": n_gt - tp,
            "matched_any_class": matched,
        },
        config={"iou_threshold": cfg.iou_threshold, "iou_mode": cfg.iou_mode, "score_floor": cfg.score_floor},
    )


# ------------------------------------------------------------ comparison


@dataclass(frozen=True)
class ReportComparison:
    rows: tuple[tuple[str, Optional[float], Optional[float], Optional[float]], ...]

    def delta(self, metric: str) -> Optional[float]:
        for name, _, _, d in self.rows:
            if name == metric:
                return d
        raise KeyError(metric)

    def render(self) -> str:
        def fmt(v, signed=False):
            if v is None:
                return f"{'-':>10}"
            return f"{v:>+10.4f}" if signed else f"{v:>10.4f}"

        lines = [f"{'metric':<26}{'a':>10}{'b':>10}{'delta':>10}"]
        for name, a, b, d in self.rows:
            lines.append(f"{name:<26}{fmt(a)}{fmt(b)}{fmt(d, signed=True)}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"rows": [{"metric": n, "a": a, "b": b, "delta": d} for n, a, b, d in self.rows]}


def compare_reports(a: EvalReport, b: EvalReport) -> ReportComparison:
    """Per-metric ``b - a`` differences in a fixed row order."""

    def row(name, va, vb):
        delta = None if va is None or vb is None else vb - va
        return (name, va, vb, delta)

    rows = [
        row("mAP", a.mAP, b.mAP),
        row("detection_accuracy", a.detection_accuracy, b.detection_accuracy),
        row("classification_accuracy", a.classification_accuracy, b.classification_accuracy),
    ]
    rows += [row(f"errors.{k}", float(a.error_counts[k]), float(b.error_counts[k])) for k in ERROR_KINDS]
    for t in sorted(ALL_CLASSES):
        va, vb = a.per_class_ap.get(t.code), b.per_class_ap.get(t.code)
        if va is not None or vb is not None:
            rows.append(row(f"ap.{t.code}", va, vb))
    return ReportComparison(tuple(rows))

