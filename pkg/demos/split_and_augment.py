"""Stratified train/val/test split of phantom panoramics, then augmentation of the train part."""
import numpy as np

from toothkit.augment import AugmentConfig, augment_dataset
from toothkit.phantom import make_dataset
from toothkit.split import SplitSpec, split_datasets, stratified_split

data = make_dataset(30, seed=1, size=256)
assignment = stratified_split(data, SplitSpec.from_weights({"train": 72, "val": 48, "test": 36}, seed=3))
parts = split_datasets(data, assignment, ["train", "val", "test"])
for name, part in parts.items():
    classes = {a.tooth.code for a in part.annotations}
    print(f"{name:5s} {len(part.images):3d} images, {len(classes)} distinct classes")

cfg = AugmentConfig(strategy="deciduous_priority", copies_deciduous=3, copies_other=1, seed=3)
aug = augment_dataset(parts["train"], cfg)
print(f"train grows from {len(parts['train'].images)} to {len(aug.images)} images")
worst = max(np.abs(np.subtract(a.bbox.xyxy(), a.polygon.bounds().xyxy())).max() for a in aug.annotations)
print(f"largest bbox/polygon-bounds disagreement after augmentation: {worst:.3f} px")
