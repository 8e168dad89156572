"""
Global L1 pruning
=================

All conv and linear weights compete in one magnitude ranking, so layers with
many small weights lose more of them than others.
"""

import math

from dfkd.nn import tinynet
from dfkd.prune import compute_mask, prune, sparsity_csv, sparsity_report

model = tinynet(seed=0)
for p in (0.25, 0.5, 0.75, 0.9):
    mask = compute_mask(model, p)
    print(f"p={p:.2f}: pruned {mask.pruned_count():5d} of {mask.total()} "
          f"(floor(p*N) = {math.floor(p * mask.total())}), threshold {mask.threshold:.4f}")

student = prune(model, 0.75)
print()
print(sparsity_csv(sparsity_report(student, student.mask)))
# The teacher passed to prune() is left untouched; the student is a masked copy.
print("teacher still dense:", sparsity_report(model)[-1].zeros == 0)
