"""
Confusion-matrix metrics: overall accuracy, average accuracy, Cohen's kappa
and the per-class report.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions; class c sits at index c-1"""
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"Confusion matrix must be square, got shape {counts.shape}")
        if (counts < 0).any():
            raise ValueError("Confusion matrix counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError(f"Cannot merge {self.num_classes}-class and {other.num_classes}-class matrices")
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    __hash__ = None


def accumulate(truth: Sequence[int], predicted: Sequence[int], num_classes: int) -> ConfusionMatrix:
    """Pairs with unlabeled (0) ground truth are skipped"""
    truth = np.asarray(truth, dtype=np.int64).ravel()
    predicted = np.asarray(predicted, dtype=np.int64).ravel()
    if truth.shape != predicted.shape:
        raise ValueError(f"{truth.size} truth labels but {predicted.size} predictions")
    keep = truth != 0
    truth, predicted = truth[keep], predicted[keep]
    for name, values in (("truth", truth), ("predicted", predicted)):
        if values.size and (values.min() < 1 or values.max() > num_classes):
            raise ValueError(f"{name} labels must lie in [1, {num_classes}]")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truth - 1, predicted - 1), 1)
    return ConfusionMatrix(counts)


def _check_non_empty(cm: ConfusionMatrix):
    if cm.total < 1:
        raise ValueError("Metrics are undefined on an empty confusion matrix")


def overall_accuracy(cm: ConfusionMatrix) -> float:
    _check_non_empty(cm)
    return float(np.trace(cm.counts) / cm.total)


def class_accuracies(cm: ConfusionMatrix) -> List[Optional[float]]:
    """Recall per class, None for classes with no ground-truth samples"""
    support = cm.support
    return [float(cm.counts[i, i] / support[i]) if support[i] else None for i in range(cm.num_classes)]


def average_accuracy(cm: ConfusionMatrix) -> float:
    """Mean recall over classes that have support; absent classes are left out"""
    present = [a for a in class_accuracies(cm) if a is not None]
    if not present:
        raise ValueError("Average accuracy needs at least one class with ground-truth samples")
    return float(np.mean(present))


def kappa(cm: ConfusionMatrix) -> float:
    """
    Cohen's kappa, computed from integer counts as
    (N·trace − Σ row·col) / (N² − Σ row·col).

    When chance agreement is total (p_e = 1) the result is 1 if every
    prediction is correct and 0 otherwise.
    """
    _check_non_empty(cm)
    total = cm.total
    chance = int(np.dot(cm.counts.sum(axis=1), cm.counts.sum(axis=0)))
    observed = int(np.trace(cm.counts))
    if chance == total * total:
        return 1.0 if observed == total else 0.0
    return float((total * observed - chance) / (total * total - chance))


@dataclass
class ClassReport:
    class_names: List[str]
    accuracies: List[Optional[float]]
    support: List[int]
    overall_accuracy: float
    average_accuracy: float
    kappa: float


def per_class_report(cm: ConfusionMatrix, class_names: Sequence[str]) -> ClassReport:
    if len(class_names) != cm.num_classes:
        raise ValueError(f"{len(class_names)} class names for a {cm.num_classes}-class matrix")
    return ClassReport(
        class_names=list(class_names),
        accuracies=class_accuracies(cm),
        support=[int(s) for s in cm.support],
        overall_accuracy=overall_accuracy(cm),
        average_accuracy=average_accuracy(cm),
        kappa=kappa(cm),
    )
