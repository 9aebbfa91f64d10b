"""
Training on one fold and scoring held-out classes
=================================================

Generates the small single-object benchmark, trains for a fixed number of
iterations on the train classes and evaluates on the unseen ones.
"""

import tempfile

import numpy as np

from coattseg.benchmark import SINGLE_OBJECT, Dataset, evaluate_fold, evaluate_runs, train_on_fold
from coattseg.episodes import generate_synthetic_dataset, substream
from coattseg.model import ModelConfig, SegModel

root = tempfile.mkdtemp()
generate_synthetic_dataset(root, seed=0, **SINGLE_OBJECT)
data = Dataset.open(root)
fold = data.folds("custom", 4)[0]
print("train classes:", fold.train_classes)
print("test classes: ", fold.test_classes)

config = ModelConfig(iterations=500, seed=0, embedding_dim=data.embedding_dim)

untrained = SegModel(config, np.random.default_rng(substream(0, "init")))
print("untrained mean-IoU", round(evaluate_fold(untrained, data, fold, 200, 1).mean_iou, 3))


def progress(it, loss):
    if it % 100 == 0:
        print(f"  iteration {it:4d}  loss {loss:.4f}")


model, result = train_on_fold(data, fold, config, callback=progress)
report = evaluate_fold(model, data, fold, 200, 1)
print("trained mean-IoU", round(report.mean_iou, 3), "binary-IoU", round(report.binary_iou, 3))
print("per class", {k: round(v, 3) for k, v in report.per_class_iou.items()})

# five independent evaluation draws, aggregated
summary = evaluate_runs(model, data, fold, runs=5, seed=7, n_episodes=100)["summary"]
print("5 runs:", summary["mean_iou"])
