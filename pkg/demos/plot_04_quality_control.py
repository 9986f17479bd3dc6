"""
Pseudo scores, disagreement maps and alert flags
================================================

Without a ground truth, a prediction is compared with its own reconstruction.
A structure missing in either mask scores (0, 0) and raises the erroneous
flag. Large pseudo Hausdorff distances or low pseudo Dice raise the
suspicious flag.
"""
import numpy as np

from segqc import Thresholds, flag, pseudo_scores, xor_map
from segqc.metrics import StructureScore
from segqc.synth import CorruptionSpec, corrupt, synth_generate

reference = synth_generate(1, size=64, seed=11, spacing=(1.5, 1.5))[0]

# stand-ins for a pGT: here the clean mask plays that role
cases = {
    "clean": reference,
    "LV missing": corrupt(reference, CorruptionSpec("drop_structure", 1, 3)),
    "stray blobs": corrupt(reference, CorruptionSpec("random_blobs", 2, 1, seed=4)),
}
for name, pred in cases.items():
    scores = pseudo_scores(pred, reference)
    summary = ", ".join(f"{s.name} pDSC {s.dsc:.3f} pHD {s.hd:5.1f} mm" for s in scores)
    print(f"{name:12s} -> {flag(scores):10s} {summary}")

# the disagreement map marks every pixel whose label differs
m = xor_map(cases["stray blobs"], reference)
print("disagreeing pixels:", m.count, "of", m.grid.size)

# thresholds are parameters; the defaults are 50 mm and 0.5
scores = [StructureScore(1, "RV", 0.9, 5.0), StructureScore(2, "MYO", 0.8, 4.0),
          StructureScore(3, "LV", 0.814, 104.93)]
print("default thresholds:", flag(scores), "| hd_max=120:", flag(scores, Thresholds(hd_max=120)))
