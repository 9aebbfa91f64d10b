import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coattseg.metrics import (
    EpisodeResult,
    MetricReport,
    aggregate_runs,
    binary_iou,
    iou,
    mean_iou,
    per_class_iou,
)
from coattseg.tensor import ContractError, DimensionError

from oracles import oracle_binary_iou, oracle_iou, oracle_mean_iou

masks = arrays(bool, (6, 6))


def result(label, pred, gt):
    return EpisodeResult(label, np.asarray(pred, bool), np.asarray(gt, bool))


class TestIoU:
    def test_identical(self):
        m = np.eye(4, dtype=bool)
        assert iou(m, m) == 1.0

    def test_disjoint(self):
        m = np.eye(4, dtype=bool)
        assert iou(m, ~m) == 0.0

    def test_half_overlap(self):
        gt = np.zeros((4, 4), bool)
        gt[0, :] = True
        pred = np.zeros((4, 4), bool)
        pred[0, :2] = True
        assert iou(pred, gt) == 0.5

    def test_empty_union_is_undefined(self):
        z = np.zeros((3, 3), bool)
        assert iou(z, z) is None

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            iou(np.zeros((2, 2)), np.zeros((2, 3)))

    @given(masks, masks)
    def test_symmetry(self, a, b):
        assert iou(a, b) == iou(b, a)

    @given(masks, masks, st.data())
    def test_growing_toward_gt_never_hurts(self, pred, gt, data):
        missing = np.argwhere(gt & ~pred)
        before = iou(pred, gt)
        if len(missing) == 0 or before is None:
            return
        k = data.draw(st.integers(1, len(missing)))
        grown = pred.copy()
        for r, c in missing[:k]:
            grown[r, c] = True
        assert iou(grown, gt) >= before

    @given(masks, masks)
    def test_matches_oracle(self, a, b):
        assert iou(a, b) == oracle_iou(a.tolist(), b.tolist())


class TestMeanIoU:
    def test_single_episode(self):
        pred = np.array([[1, 1, 0, 0]])
        gt = np.array([[1, 1, 1, 1]])
        assert mean_iou([result("a", pred, gt)]) == 0.5

    def test_two_classes_average(self):
        # per-class IoU 0.4 and 0.6
        gt = np.ones((1, 10), bool)
        p4 = np.zeros((1, 10), bool)
        p4[0, :4] = True
        p6 = np.zeros((1, 10), bool)
        p6[0, :6] = True
        rs = [result("a", p4, gt), result("b", p6, gt)]
        assert per_class_iou(rs) == {"a": 0.4, "b": 0.6}
        assert mean_iou(rs) == pytest.approx(0.5, abs=1e-15)

    def test_dataset_level_aggregation(self):
        # episode IoUs 1/1 and 0/3; pooled 1/4, per-episode mean 1/2
        rs = [
            result("a", [[1, 0, 0, 0]], [[1, 0, 0, 0]]),
            result("a", [[0, 1, 1, 0]], [[0, 0, 0, 1]]),
        ]
        assert mean_iou(rs) == 0.25
        assert mean_iou(rs, per_episode=True) == 0.5

    def test_zero_union_class_excluded(self):
        rs = [
            result("a", [[1, 0]], [[1, 1]]),
            result("b", [[0, 0]], [[0, 0]]),
        ]
        assert per_class_iou(rs) == {"a": 0.5}
        assert mean_iou(rs) == 0.5

    def test_empty_results(self):
        with pytest.raises(ContractError):
            mean_iou([])

    def test_foreign_class(self):
        with pytest.raises(ContractError, match="zebra"):
            mean_iou([result("zebra", [[1]], [[1]])], classes=["cat"])

    def test_five_class_micro_benchmark(self):
        rng = np.random.default_rng(11)
        pairs = []
        for _ in range(60):
            label = f"k{rng.integers(5)}"
            pairs.append((label, rng.random((8, 8)) < 0.4, rng.random((8, 8)) < 0.3))
        rs = [result(*p) for p in pairs]
        expected = oracle_mean_iou([(l, p.tolist(), g.tolist()) for l, p, g in pairs])
        assert abs(mean_iou(rs) - expected) <= 1e-12


class TestBinaryIoU:
    def test_perfect(self):
        gt = np.random.default_rng(0).random((5, 5)) < 0.5
        assert binary_iou([result("a", gt, gt), result("b", ~gt, ~gt)]) == 1.0

    def test_all_background_on_half_foreground(self):
        gt = np.zeros((4, 4), bool)
        gt[:, :2] = True
        rs = [result("a", np.zeros_like(gt), gt), result("b", np.zeros_like(gt), gt)]
        assert binary_iou(rs) == 0.25

    @settings(max_examples=50)
    @given(st.lists(st.tuples(masks, masks), min_size=1, max_size=6), st.randoms(use_true_random=False))
    def test_class_relabeling_invariance(self, pairs, rnd):
        labels = [f"c{i}" for i in range(len(pairs))]
        shuffled = labels[:]
        rnd.shuffle(shuffled)
        a = binary_iou([result(l, p, g) for l, (p, g) in zip(labels, pairs)])
        b = binary_iou([result(l, p, g) for l, (p, g) in zip(shuffled, pairs)])
        assert a == b


def test_report_invariants():
    rng = np.random.default_rng(2)
    rs = [result(f"k{i % 3}", rng.random((8, 8)) < 0.5, rng.random((8, 8)) < 0.5) for i in range(12)]
    report = MetricReport.from_results(rs, ["k0", "k1", "k2"], "custom", 0, 9)
    values = list(report.per_class_iou.values())
    assert report.mean_iou == pytest.approx(sum(values) / len(values), abs=1e-15)
    assert all(0 <= v <= 1 for v in values + [report.mean_iou, report.binary_iou])
    d = report.to_dict()
    assert {"scheme", "fold_id", "run_seed", "per_class_iou", "mean_iou", "binary_iou", "n_episodes"} <= d.keys()


def _report(m, fold=0):
    return MetricReport("custom", fold, 0, {"a": m}, m, m, 1)


class TestAggregate:
    def test_identical(self):
        s = aggregate_runs([_report(0.3)] * 5)
        assert s.mean_iou == {"mean": 0.3, "stddev": 0.0}
        assert s.warnings == []

    def test_sample_stddev(self):
        s = aggregate_runs([_report(v) for v in [0.4, 0.5, 0.6, 0.5, 0.5]])
        assert s.mean_iou["mean"] == pytest.approx(0.5, abs=1e-12)
        # direct formula: sqrt(sum of squared deviations / (n - 1))
        assert s.mean_iou["stddev"] == pytest.approx(math.sqrt(0.02 / 4), abs=1e-12)
        assert abs(s.mean_iou["stddev"] - 0.070711) <= 1e-6

    def test_count_mismatch_warns(self):
        s = aggregate_runs([_report(0.5)] * 3)
        assert s.runs == 3 and "expected 5" in s.warnings[0]

    def test_mixed_folds_rejected(self):
        with pytest.raises(ContractError):
            aggregate_runs([_report(0.5, 0), _report(0.5, 1)])
