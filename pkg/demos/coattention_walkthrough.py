"""
A single co-attention block, step by step
=========================================

Two random feature maps and a class vector go through one block. Each
intermediate is printed with its shape so the flow of tensors is visible.
"""

import numpy as np

from coattseg.coattention import (
    FeatureMap,
    Projection,
    coattention_trace,
    init_blocks,
    project_embedding,
    stacked_coattention,
)

rng = np.random.default_rng(0)
C, H, W, d = 4, 3, 3, 5

support = FeatureMap.from_array(rng.normal(size=(C, H, W)))
query = FeatureMap.from_array(rng.normal(size=(C, H, W)))

# a 12-dimensional "word vector" projected down to d channels
projection = Projection.init(12, d, rng)
z = project_embedding(rng.normal(size=12), projection)
print("z", z.shape)

blocks = init_blocks(C, d, depth=2, rng=rng)
t = coattention_trace(support, query, z, blocks[0])

for name in ("vs_aug", "affinity", "s_c", "s_r", "u_q", "gate_q"):
    print(f"{name:9s}", getattr(t, name).shape)

# every column of the normalised affinity is a distribution over support locations
print("column sums of S^c:", np.round(t.s_c.data.sum(axis=0), 12))

# so every attended query column lies inside the box spanned by support columns
lo, hi = t.vs_aug.data.min(axis=1), t.vs_aug.data.max(axis=1)
inside = np.all((t.u_q.data >= lo[:, None] - 1e-12) & (t.u_q.data <= hi[:, None] + 1e-12))
print("U_q within support range:", inside)

print("gate values:", np.round(t.gate_q.data.ravel(), 3))

# stacking: the second block consumes the first block's outputs
fq, fs = stacked_coattention(support, query, z, blocks)
print("stacked outputs", fq.to_array().shape, fs.to_array().shape)
