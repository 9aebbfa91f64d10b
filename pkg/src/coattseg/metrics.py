"""Segmentation metrics over episode results.

mean-IoU: per-class foreground IoU over the fold's classes, averaged with the
background left out. binary-IoU: class-agnostic mean of foreground and
background IoU over all pooled pixels.
"""

from __future__ import annotations

import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .tensor import ContractError, DimensionError


@dataclass(frozen=True)
class EpisodeResult:
    class_label: str
    pred: np.ndarray
    gt: np.ndarray

    def __post_init__(self):
        if np.shape(self.pred) != np.shape(self.gt):
            raise DimensionError(f"prediction {np.shape(self.pred)} vs mask {np.shape(self.gt)}")


def _counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} vs mask {gt.shape}")
    return int(np.count_nonzero(pred & gt)), int(np.count_nonzero(pred | gt))


def iou(pred: np.ndarray, gt: np.ndarray) -> float | None:
    """Intersection over union, or ``None`` when both masks are empty."""
    inter, union = _counts(pred, gt)
    return None if union == 0 else inter / union


def per_class_iou(
    results: Iterable[EpisodeResult], classes: Sequence[str] | None = None, per_episode: bool = False
) -> dict[str, float]:
    """IoU for each class with a non-empty union.

    By default intersections and unions are summed over a class's episodes
    before dividing; ``per_episode`` averages episode IoUs instead.
    """
    inter = defaultdict(int)
    union = defaultdict(int)
    episode_ious = defaultdict(list)
    for r in results:
        if classes is not None and r.class_label not in classes:
            raise ContractError(f"result class {r.class_label!r} is not one of the fold classes")
        i, u = _counts(r.pred, r.gt)
        inter[r.class_label] += i
        union[r.class_label] += u
        if u:
            episode_ious[r.class_label].append(i / u)
    if per_episode:
        return {c: float(np.mean(v)) for c, v in sorted(episode_ious.items())}
    return {c: inter[c] / union[c] for c in sorted(union) if union[c] > 0}


def mean_iou(
    results: Sequence[EpisodeResult], classes: Sequence[str] | None = None, per_episode: bool = False
) -> float:
    results = list(results)
    if not results:
        raise ContractError("mean_iou needs at least one episode result")
    scores = per_class_iou(results, classes, per_episode)
    if not scores:
        raise ContractError("every class has an empty union; mean-IoU is undefined")
    return sum(scores.values()) / len(scores)


def binary_iou(results: Sequence[EpisodeResult]) -> float:
    results = list(results)
    if not results:
        raise ContractError("binary_iou needs at least one episode result")
    fi = fu = bi = bu = 0
    for r in results:
        pred = np.asarray(r.pred, dtype=bool)
        gt = np.asarray(r.gt, dtype=bool)
        i, u = _counts(pred, gt)
        fi, fu = fi + i, fu + u
        i, u = _counts(~pred, ~gt)
        bi, bu = bi + i, bu + u
    parts = [fi / fu if fu else None, bi / bu if bu else None]
    parts = [p for p in parts if p is not None]
    return sum(parts) / len(parts)


@dataclass
class MetricReport:
    scheme: str
    fold_id: int
    run_seed: int
    per_class_iou: dict[str, float]
    mean_iou: float
    binary_iou: float
    n_episodes: int
    metric_note: str = "mean-IoU over fold test classes, background excluded"

    @classmethod
    def from_results(
        cls,
        results: Sequence[EpisodeResult],
        classes: Sequence[str],
        scheme: str,
        fold_id: int,
        run_seed: int,
        per_episode: bool = False,
    ) -> "MetricReport":
        per_class = per_class_iou(results, classes, per_episode)
        return cls(
            scheme=scheme,
            fold_id=fold_id,
            run_seed=run_seed,
            per_class_iou=per_class,
            mean_iou=mean_iou(results, classes, per_episode),
            binary_iou=binary_iou(results),
            n_episodes=len(results),
        )

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "fold_id": self.fold_id,
            "run_seed": self.run_seed,
            "per_class_iou": dict(sorted(self.per_class_iou.items())),
            "mean_iou": self.mean_iou,
            "binary_iou": self.binary_iou,
            "n_episodes": self.n_episodes,
            "metric_note": self.metric_note,
        }


@dataclass
class RunSummary:
    runs: int
    mean_iou: dict[str, float]
    binary_iou: dict[str, float]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "mean_iou": self.mean_iou,
            "binary_iou": self.binary_iou,
            "warnings": self.warnings,
        }


def _mean_std(values: list[float]) -> dict[str, float]:
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return {"mean": statistics.fmean(values), "stddev": std}


def aggregate_runs(reports: Sequence[MetricReport], expected: int = 5) -> RunSummary:
    """Mean and sample standard deviation across independent runs."""
    if not reports:
        raise ContractError("aggregate_runs needs at least one report")
    folds = {(r.scheme, r.fold_id) for r in reports}
    if len(folds) > 1:
        raise ContractError(f"reports mix folds/schemes: {sorted(folds)}")
    warnings = []
    if len(reports) != expected:
        warnings.append(f"expected {expected} runs, got {len(reports)}")
    return RunSummary(
        runs=len(reports),
        mean_iou=_mean_std([r.mean_iou for r in reports]),
        binary_iou=_mean_std([r.binary_iou for r in reports]),
        warnings=warnings,
    )
