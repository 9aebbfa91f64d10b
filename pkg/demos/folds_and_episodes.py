"""
Class folds and episode sampling
================================

Classes are split into contiguous folds. Training episodes only ever use a
fold's train classes; evaluation episodes only its held-out classes.
"""

import tempfile

from coattseg.episodes import (
    default_class_order,
    generate_synthetic_dataset,
    make_folds,
    sample_episode,
)

# the 20-class image benchmark: 4 folds of 5 held-out classes
for fold in make_folds(default_class_order("pascal"), "pascal"):
    print(fold.fold_id, ", ".join(fold.test_classes))

# the 65-class video benchmark: 5 folds of 13
vos = make_folds(default_class_order("vos"), "vos")
print([len(f.test_classes) for f in vos])

# a small synthetic video dataset, two objects per frame
root = tempfile.mkdtemp()
index = generate_synthetic_dataset(root, n_classes=6, items_per_class=2, frames=5, two_object=True, size=32)
fold = make_folds(index.classes(), "custom", 3)[0]
print("held out:", fold.test_classes)

for seed in range(3):
    ep = sample_episode(fold, "test", index, seed)
    # support is always the first frame; the query a later one
    print(ep.class_label, ep.sequence, "frames", ep.frames)
