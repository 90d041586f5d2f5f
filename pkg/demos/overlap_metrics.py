"""Box overlap, optimal assignment and the matching loss on small hand-made cases."""
import numpy as np

from toothkit.matching import LossWeights, SlotOutput, giou, hungarian_assign, hungarian_loss, iou
from toothkit.types import NO_OBJECT, BBox, ToothAnnotation, ToothClass
from toothkit.phantom import tooth_polygon

a, b = BBox(0, 0, 10, 10), BBox(5, 5, 10, 10)
print(f"IoU={iou(a, b):.6f}  GIoU={giou(a, b):.6f}")

cost = np.array([[4, 1, 3], [2, 0, 5], [3, 2, 2]])
print("assignment (row -> col):", hungarian_assign(cost))

gt_box = BBox(100, 100, 40, 80)
gt = ToothAnnotation(ToothClass(11), gt_box, tooth_polygon(gt_box))
probs = np.full(53, 0.01)
probs[gt.tooth.index] = 0.9
probs /= probs.sum()
empty = np.full(53, 0.001)
empty[NO_OBJECT] = 1.0
empty /= empty.sum()
slots = [SlotOutput(probs, BBox(104, 98, 38, 84)), SlotOutput(empty, BBox(0, 0, 5, 5))]
loss = hungarian_loss(slots, [gt], LossWeights(), 512)
print(f"matched pairs {loss.match.pairs}; total loss {loss.total:.4f}")
