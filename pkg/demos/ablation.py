"""
Does the class label help?
==========================

On the two-object benchmark every image holds the target and a distractor.
The full model receives the class vector; the baseline gets z = 0 and must
guess which object the support refers to. Pass a seed count to average more
runs (default 1; the acceptance suite uses 5).
"""

import sys
import tempfile

from coattseg.benchmark import ablation_run

n = int(sys.argv[1]) if len(sys.argv) > 1 else 1
workdir = tempfile.mkdtemp()

gaps = []
for seed in range(n):
    run = ablation_run(workdir, seed)
    gaps.append(run.gap)
    print(f"seed {seed} fold {run.fold_id}: full {run.full:.3f}  baseline {run.baseline:.3f}  gap {run.gap:+.3f}")

print(f"mean gap over {n} run(s): {sum(gaps) / n:+.3f}")
