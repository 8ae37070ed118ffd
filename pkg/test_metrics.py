#!/usr/bin/env python3
"""
Tests for confusion matrices, OA/AA/kappa and per-class reports
"""
import numpy as np
import pytest
from sklearn.metrics import cohen_kappa_score, confusion_matrix

from metrics import (ConfusionMatrix, accumulate, average_accuracy, class_accuracies, kappa, overall_accuracy,
                     per_class_report)
from report_handler import class_report_frame, format_class_report


def test_hand_example_oa_and_kappa():
    cm = ConfusionMatrix([[40, 10], [10, 40]])
    assert overall_accuracy(cm) == 0.8
    assert kappa(cm) == 0.6


def test_average_accuracy_is_mean_recall():
    cm = ConfusionMatrix([[8, 2], [5, 5]])
    assert average_accuracy(cm) == pytest.approx(0.65, abs=1e-15)
    assert class_accuracies(cm) == [0.8, 0.5]


def test_absent_classes_are_left_out_of_the_average():
    cm = ConfusionMatrix([[90, 10], [0, 0]])
    assert class_accuracies(cm) == [0.9, None]
    assert average_accuracy(cm) == pytest.approx(0.9)


def test_uniform_matrix_has_zero_kappa():
    assert kappa(ConfusionMatrix([[25, 25], [25, 25]])) == 0.0


def test_total_chance_agreement():
    assert kappa(ConfusionMatrix([[10, 0], [0, 0]])) == 1.0
    perfect = ConfusionMatrix(np.diag([3, 4, 5]))
    assert overall_accuracy(perfect) == 1.0 and kappa(perfect) == 1.0


def test_empty_matrix_is_rejected():
    with pytest.raises(ValueError):
        overall_accuracy(ConfusionMatrix.zeros(3))
    with pytest.raises(ValueError):
        kappa(ConfusionMatrix.zeros(3))
    with pytest.raises(ValueError):
        average_accuracy(ConfusionMatrix.zeros(3))


def test_matrix_validation():
    with pytest.raises(ValueError):
        ConfusionMatrix([[1, 2, 3]])
    with pytest.raises(ValueError):
        ConfusionMatrix([[1, -1], [0, 1]])
    assert not ConfusionMatrix.zeros(2).counts.flags.writeable


def test_accumulate_skips_unlabeled_pixels():
    cm = accumulate([0, 1, 2, 2, 0], [3, 1, 2, 1, 1], 3)
    assert cm.counts.tolist() == [[1, 0, 0], [1, 1, 0], [0, 0, 0]]
    assert cm.total == 3
    with pytest.raises(ValueError):
        accumulate([1, 4], [1, 1], 3)
    with pytest.raises(ValueError):
        accumulate([1, 2], [1, 0], 3)
    with pytest.raises(ValueError):
        accumulate([1, 2], [1], 3)


def test_matrices_add_up():
    rng = np.random.default_rng(0)
    truth, pred = rng.integers(0, 5, size=(2, 200))
    pred[pred == 0] = 1
    whole = accumulate(truth, pred, 4)
    halves = accumulate(truth[:77], pred[:77], 4) + accumulate(truth[77:], pred[77:], 4)
    assert whole == halves
    with pytest.raises(ValueError):
        whole + ConfusionMatrix.zeros(3)


@pytest.mark.parametrize("seed", range(20))
def test_against_sklearn(seed):
    rng = np.random.default_rng(seed)
    classes = int(rng.integers(2, 8))
    truth = rng.integers(1, classes + 1, size=300)
    # mostly right, with random confusions
    pred = np.where(rng.random(300) < 0.7, truth, rng.integers(1, classes + 1, size=300))
    cm = accumulate(truth, pred, classes)
    expected = confusion_matrix(truth, pred, labels=list(range(1, classes + 1)))
    assert np.array_equal(cm.counts, expected)
    assert kappa(cm) == pytest.approx(cohen_kappa_score(truth, pred), abs=1e-9)
    assert kappa(cm) <= overall_accuracy(cm)


def test_metrics_match_direct_recomputation_on_random_matrices():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        classes = int(rng.integers(2, 7))
        counts = rng.integers(0, 20, size=(classes, classes))
        counts[0, 0] += 1
        cm = ConfusionMatrix(counts)
        total = counts.sum()
        p_o = np.trace(counts) / total
        p_e = float(np.sum(counts.sum(axis=1) * counts.sum(axis=0))) / total ** 2
        assert overall_accuracy(cm) == pytest.approx(p_o, abs=1e-12)
        if p_e < 1:
            assert kappa(cm) == pytest.approx((p_o - p_e) / (1 - p_e), abs=1e-9)
        assert kappa(cm) <= overall_accuracy(cm) + 1e-12
        recalls = [counts[i, i] / counts[i].sum() for i in range(classes) if counts[i].sum()]
        assert average_accuracy(cm) == pytest.approx(np.mean(recalls), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_kappa_is_invariant_under_class_relabeling(seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 30, size=(5, 5))
    order = rng.permutation(5)
    permuted = ConfusionMatrix(counts[np.ix_(order, order)])
    original = ConfusionMatrix(counts)
    assert kappa(permuted) == pytest.approx(kappa(original), abs=1e-12)
    assert overall_accuracy(permuted) == overall_accuracy(original)


def test_per_class_report_and_rendering():
    cm = ConfusionMatrix([[10, 0, 0], [2, 8, 0], [0, 0, 0]])
    report = per_class_report(cm, ["Corn", "Grass", "Wheat"])
    assert report.support == [10, 10, 0]
    assert report.overall_accuracy == 0.9

    frame = class_report_frame(report)
    assert frame.loc["Corn", "Accuracy (%)"] == "100.00"
    assert frame.loc["Grass", "Accuracy (%)"] == "80.00"
    assert frame.loc["Wheat", "Accuracy (%)"] == "n/a"
    assert frame.loc["OA", "Accuracy (%)"] == "90.00"

    text = format_class_report(report, "Clean")
    assert "Clean" in text and "n/a" in text
    with pytest.raises(ValueError):
        per_class_report(cm, ["Corn"])


if __name__ == "__main__":
    pytest.main([__file__])
