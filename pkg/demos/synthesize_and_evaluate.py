"""Compose synthetic panoramics from a tooth bank, corrupt labels, and repair them."""
import numpy as np

from toothkit.coco import predictions_from_dataset
from toothkit.evaluate import evaluate
from toothkit.phantom import make_dataset, make_empties, make_specs
from toothkit.postproc import SectionGeometry, postprocess
from toothkit.synth import build_tooth_bank, synthesize_batch
from toothkit.types import Prediction, mirror_class

size = 256
bank = build_tooth_bank(make_dataset(4, seed=2, size=size, every_class=True))
result = synthesize_batch(make_specs(12, seed=2), make_empties(3, seed=2, size=size), bank, seed=2)
gt = result.dataset
print(f"{len(gt.images)} images, {len(gt.annotations)} teeth, "
      f"{sum(len(p['skipped']) for p in result.provenance)} skipped")

rng = np.random.default_rng(0)
preds = [Prediction(p.image_id, mirror_class(p.tooth), p.bbox, p.score) if rng.random() < 0.25 else p
         for p in predictions_from_dataset(gt)]
before = evaluate(preds, gt)
fixed, changes = postprocess(preds, SectionGeometry(size / 2, size / 2))
after = evaluate(fixed, gt)
print(f"mAP {before.mAP:.3f} -> {after.mAP:.3f}; accuracy {before.classification_accuracy:.3f} -> "
      f"{after.classification_accuracy:.3f}; {len(changes)} corrections")
print("errors before:", before.error_counts)
