"""Deterministic multi-label iterative stratification (Sechidis et al. 2011).

Each image is labelled by the set of tooth classes it contains. Labels are
processed rarest first; every image carrying the label goes to the split
that still wants the most examples of it. Split sizes are fixed up front by
largest-remainder rounding and are never exceeded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .coco import CocoDataset
from .errors import ValidationError


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[tuple[str, float], ...]
    seed: int = 0

    def __post_init__(self):
        ratios = tuple((str(name), float(frac)) for name, frac in self.ratios)
        if not ratios:
            raise ValueError("at least one split is required")
        names = [n for n, _ in ratios]
        if len(set(names)) != len(names):
            raise ValueError(f"split names must be unique, got {names}")
        if any(not f > 0 for _, f in ratios):
            raise ValueError("every split fraction must be positive")
        if abs(sum(f for _, f in ratios) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        object.__setattr__(self, "ratios", ratios)

    @classmethod
    def from_weights(cls, weights: Mapping[str, float] | Sequence[tuple[str, float]], seed: int = 0) -> "SplitSpec":
        """Normalize arbitrary positive weights, e.g. ``{"train": 72, "val": 48, "test": 36}``."""
        items = list(weights.items()) if isinstance(weights, Mapping) else list(weights)
        total = float(sum(w for _, w in items))
        return cls(tuple((n, w / total) for n, w in items), seed)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.ratios]

    @property
    def fractions(self) -> np.ndarray:
        return np.array([f for _, f in self.ratios])


def split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to the lower index."""
    quotas = [f * n for f in fractions]
    # absorb float noise so that 72/156 * 156 counts as exactly 72
    base = [int(math.floor(q + 1e-9)) for q in quotas]
    rema = [max(q - b, 0.0) for q, b in zip(quotas, base)]
    order = sorted(range(len(quotas)), key=lambda k: (-rema[k], k))
    for k in order[: n - sum(base)]:
        base[k] += 1
    return base


def iterative_stratification(
    labels: Sequence[frozenset], fractions: Sequence[float], seed: int = 0
) -> np.ndarray:
    """Assign each item (given by its label set) to a split index."""
    n = len(labels)
    if n == 0:
        raise ValidationError("cannot split an empty dataset")
    k = len(fractions)
    sizes = split_sizes(n, fractions)
    if min(sizes) == 0:
        raise ValidationError(f"fractions {list(fractions)} give a zero-size split for {n} images")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)  # seeded visiting order for images
    rank = np.empty(n, dtype=int)
    rank[order] = np.arange(n)

    fr = np.asarray(fractions, dtype=float)
    capacity = np.array(sizes, dtype=float)
    all_labels = sorted({lab for s in labels for lab in s}, key=_label_key)
    label_demand = {lab: fr * sum(1 for s in labels if lab in s) for lab in all_labels}
    remaining = {lab: {i for i in range(n) if lab in labels[i]} for lab in all_labels}

    assign = np.full(n, -1, dtype=int)

    def place(i: int, j: int) -> None:
        assign[i] = j
        capacity[j] -= 1
        for lab in labels[i]:
            label_demand[lab][j] -= 1
            remaining[lab].discard(i)

    while True:
        live = [lab for lab in all_labels if remaining[lab]]
        if not live:
            break
        # rarest label first; ties by label order
        lab = min(live, key=lambda l: (len(remaining[l]), _label_key(l)))
        for i in sorted(remaining[lab], key=lambda i: rank[i]):
            open_splits = [j for j in range(k) if capacity[j] > 0]
            j = min(open_splits, key=lambda j: (-label_demand[lab][j], -capacity[j], j))
            place(i, j)

    for i in order:
        if assign[i] < 0:
            open_splits = [j for j in range(k) if capacity[j] > 0]
            place(i, min(open_splits, key=lambda j: (-capacity[j], j)))
    return assign


def _label_key(label: Hashable):
    return (getattr(label, "code", 0), str(label))


def stratified_split(d: CocoDataset, spec: SplitSpec) -> dict[int, str]:
    """Map each image id to a split name."""
    label_sets = d.label_sets()
    ids = [img.id for img in d.images]
    assign = iterative_stratification([label_sets[i] for i in ids], spec.fractions, spec.seed)
    names = spec.names
    return {img_id: names[j] for img_id, j in zip(ids, assign)}


def split_datasets(d: CocoDataset, assignment: Mapping[int, str], names: Sequence[str]) -> dict[str, CocoDataset]:
    return {name: d.subset(i for i, s in assignment.items() if s == name) for name in names}


def label_deviation(labels: Sequence[frozenset], assign: Sequence[int], fractions: Sequence[float]) -> float:
    """Mean over labels and splits of |share of the label's images in the split - target fraction|."""
    fr = np.asarray(fractions, dtype=float)
    assign = np.asarray(assign)
    all_labels = sorted({lab for s in labels for lab in s}, key=_label_key)
    if not all_labels:
        return 0.0
    devs = []
    for lab in all_labels:
        idx = np.array([lab in s for s in labels])
        counts = np.bincount(assign[idx], minlength=len(fr))
        devs.append(np.abs(counts / idx.sum() - fr))
    return float(np.mean(devs))


def random_split(n: int, fractions: Sequence[float], seed: int = 0) -> np.ndarray:
    """Uniformly random assignment with the same split sizes (baseline for comparison)."""
    sizes = split_sizes(n, fractions)
    assign = np.repeat(np.arange(len(sizes)), sizes)
    return np.random.default_rng(seed).permutation(assign)
