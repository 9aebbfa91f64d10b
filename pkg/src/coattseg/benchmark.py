"""Train/evaluate orchestration shared by the CLI, demos and tests."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as fio
from .episodes import DatasetIndex, FoldSpec, episode_stream, generate_synthetic_dataset, make_folds, substream
from .metrics import EpisodeResult, MetricReport, aggregate_runs
from .model import EpisodeLoader, ModelConfig, SegModel, TrainResult, forward_episode, train


@dataclass
class Dataset:
    root: Path
    index: DatasetIndex
    classes: list[str]
    loader: EpisodeLoader

    @classmethod
    def open(cls, root) -> "Dataset":
        root = Path(root)
        index = DatasetIndex.load(root / "manifest.jsonl")
        classes_file = root / "classes.txt"
        classes = fio.read_class_list(classes_file) if classes_file.exists() else index.classes()
        table_file = root / "embeddings.txt"
        table = fio.load_embedding_table(table_file) if table_file.exists() else None
        return cls(root, index, classes, EpisodeLoader(table))

    @property
    def embedding_dim(self) -> int:
        return self.loader.table.dim if self.loader.table is not None else 0

    def folds(self, scheme: str, n_folds: int | None = None) -> list[FoldSpec]:
        return make_folds(self.classes, scheme, n_folds)


def train_on_fold(
    dataset: Dataset, fold: FoldSpec, config: ModelConfig, callback=None
) -> tuple[SegModel, TrainResult]:
    """Fixed-iteration training on the fold's train classes only."""
    if config.use_embedding and dataset.embedding_dim:
        config = ModelConfig.from_dict({**config.to_dict(), "embedding_dim": dataset.embedding_dim})
    model = SegModel(config, np.random.default_rng(substream(config.seed, "init")))
    stream = episode_stream(fold, "train", dataset.index, substream(config.seed, "sampler"))
    result = train(model, stream, dataset.loader, config, callback=callback)
    return model, result


def evaluate_fold(
    model: SegModel,
    dataset: Dataset,
    fold: FoldSpec,
    n_episodes: int,
    seed: int,
    scheme: str = "custom",
    split: str = "test",
) -> MetricReport:
    stream = episode_stream(fold, split, dataset.index, substream(seed, "eval"))
    results = []
    for _ in range(n_episodes):
        ep = next(stream)
        pred = forward_episode(ep, model, dataset.loader)
        results.append(EpisodeResult(ep.class_label, pred.binarized, dataset.loader.mask(ep.gt_mask)))
    return MetricReport.from_results(results, fold.classes(split), scheme, fold.fold_id, seed)


def evaluate_runs(
    model: SegModel,
    dataset: Dataset,
    fold: FoldSpec,
    runs: int,
    seed: int,
    n_episodes: int,
    scheme: str = "custom",
) -> dict:
    """Evaluate ``runs`` times with independent episode draws and aggregate."""
    reports = [
        evaluate_fold(model, dataset, fold, n_episodes, substream(seed, f"run{r}"), scheme)
        for r in range(runs)
    ]
    summary = aggregate_runs(reports)
    return {"runs": [r.to_dict() for r in reports], "summary": summary.to_dict()}


# Synthetic benchmark settings. The two-object variant needs more classes and
# training for the label-driven selection to be learned from the train split.
SINGLE_OBJECT = {"n_classes": 8, "items_per_class": 20, "size": 16, "two_object": False}
TWO_OBJECT = {"n_classes": 16, "items_per_class": 20, "size": 32, "two_object": True, "jitter": 0.12}
ABLATION_ITERATIONS = 1000
BENCHMARK_FOLDS = 4


@dataclass
class AblationRun:
    seed: int
    fold_id: int
    full: float
    baseline: float

    @property
    def gap(self) -> float:
        return self.full - self.baseline


def ablation_run(
    workdir, seed: int, iterations: int = ABLATION_ITERATIONS, n_episodes: int = 200
) -> AblationRun:
    """Train the full model and the no-embedding baseline on one two-object fold.

    The dataset, the training draws and the fold (``seed % 4``) all follow
    ``seed``; both models see the identical episode stream.
    """
    root = Path(workdir) / f"two_object_seed{seed}"
    generate_synthetic_dataset(root, seed=seed, **TWO_OBJECT)
    dataset = Dataset.open(root)
    fold = dataset.folds("custom", BENCHMARK_FOLDS)[seed % BENCHMARK_FOLDS]
    scores = []
    for use_embedding in (True, False):
        config = ModelConfig(iterations=iterations, seed=seed, use_embedding=use_embedding)
        model, _ = train_on_fold(dataset, fold, config)
        scores.append(evaluate_fold(model, dataset, fold, n_episodes, seed).mean_iou)
    return AblationRun(seed, fold.fold_id, *scores)
