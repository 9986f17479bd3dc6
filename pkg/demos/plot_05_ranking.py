"""
Ranking models without their ground truth
=========================================

Models are ranked by mean pseudo Hausdorff distance. When real scores are
at hand, Spearman's r_s tells how well the pseudo ranking matches the real one.
"""
import numpy as np

from segqc import QualityRecord, ReferenceScore, pearson_r, simulate_ranking, spearman_rs
from segqc.metrics import StructureScore

# mean HD (mm) of five models on one structure: real and pseudo
models = ["Bai", "Baumgartner", "Khened", "Tziritas", "Yang"]
real = [50.21, 14.00, 13.25, 21.02, 86.08]
pseudo = [31.82, 7.72, 6.87, 9.86, 47.24]

records = [QualityRecord.from_scores("mean", m, "ED", [StructureScore(1, "RV", 0.9, p)])
           for m, p in zip(models, pseudo)]
ref = [ReferenceScore("mean", m, "ED", "RV", 0.9, r) for m, r in zip(models, real)]
table = simulate_ranking(records, ref)[0]
for model, structure, phase, mean, rank in table.rows():
    print(f"{rank}. {model:12s} {mean:6.2f} mm")
print("r_s:", table.r_s)

# swapping two neighbours in a ranking of five costs 0.1
print("adjacent swap:", spearman_rs([1, 2, 3, 4, 5], [1, 2, 4, 3, 5]))
print("Pearson r real vs pseudo:", round(pearson_r(real, pseudo), 4))
