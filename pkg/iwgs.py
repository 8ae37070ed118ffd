"""
Iterative wavelet-based gradient sampling: greedy selection of wavelet
channels driven by the gradient of the classification loss with respect to a
binary channel mask.
"""
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from classifier import ClassifierParams, DifferentiableModel, predict
from data import HyperCube, LabelMap, make_rng, patch_stack
from errors import DataError, NumericError
from wavelet import CoeffCube, WaveletSpec, analyze, forward, masked_reconstruct, synthesis_matrix, synthesize

logger = logging.getLogger(__name__)

MASK_FORMAT_VERSION = 1


class Criterion(Enum):
    ABS_MIN = "abs_min"          # arg min |∂L/∂w_j|, the rule as printed
    SIGNED_MIN = "signed_min"    # most negative gradient, largest first-order loss drop
    ABS_MAX = "abs_max"
    LOSS_DROP = "loss_drop"      # exhaustive: evaluate the true loss of every candidate


class BudgetMode(Enum):
    TOTAL = "total"                  # the central channel counts toward N_s
    PAPER_LITERAL = "paper_literal"  # central channel plus N_s loop picks


@dataclass(frozen=True)
class IwgsConfig:
    num_bands: int = 4
    criterion: Criterion = Criterion.ABS_MIN
    budget_mode: BudgetMode = BudgetMode.TOTAL
    wavelet: WaveletSpec = field(default_factory=WaveletSpec)
    eval_subset_size: int = 512
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        object.__setattr__(self, "budget_mode", BudgetMode(self.budget_mode))
        if self.num_bands < 1:
            raise ValueError(f"num_bands must be positive, got {self.num_bands}")
        if self.eval_subset_size < 1:
            raise ValueError(f"eval_subset_size must be positive, got {self.eval_subset_size}")

    @property
    def loop_picks(self) -> int:
        return self.num_bands - 1 if self.budget_mode is BudgetMode.TOTAL else self.num_bands

    @property
    def selected_total(self) -> int:
        return self.loop_picks + 1


@dataclass(frozen=True, eq=False)
class SelectionMask:
    w: np.ndarray
    spec: Optional[WaveletSpec] = None
    bands: Optional[int] = None

    def __post_init__(self):
        w = np.array(self.w, dtype=np.int8)
        if w.ndim != 1 or not np.isin(w, (0, 1)).all():
            raise ValueError("A selection mask is a binary vector")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_indices(cls, length: int, indices, spec: Optional[WaveletSpec] = None,
                     bands: Optional[int] = None) -> "SelectionMask":
        w = np.zeros(length, dtype=np.int8)
        w[np.asarray(list(indices), dtype=np.int64)] = 1
        return cls(w, spec, bands)

    @property
    def selected_count(self) -> int:
        return int(self.w.sum())

    @property
    def indices(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.w)]

    def __len__(self) -> int:
        return self.w.shape[0]


@dataclass
class TraceRecord:
    iteration: int
    chosen: int
    loss_before: float
    candidates: List[int]
    gradient: List[float]
    criterion: str

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "chosen": self.chosen, "loss_before": self.loss_before,
                "candidates": self.candidates, "gradient": self.gradient, "criterion": self.criterion}


@dataclass
class SelectionTrace:
    records: List[TraceRecord] = field(default_factory=list)
    initial_channel: int = 0
    final_loss: Optional[float] = None

    @property
    def chosen(self) -> List[int]:
        return [r.chosen for r in self.records]


# --- gradient -------------------------------------------------------------

def _subset(coeffs: CoeffCube, labels: np.ndarray, subset) -> Tuple[CoeffCube, np.ndarray]:
    labels = np.asarray(labels, dtype=np.int64)
    if subset is not None:
        subset = np.asarray(subset, dtype=np.int64)
        coeffs = CoeffCube(coeffs.values[subset], coeffs.spec, coeffs.bands)
        labels = labels[subset]
    if labels.size == 0:
        raise ValueError("Mask gradient needs a non-empty evaluation subset")
    if coeffs.values.shape[0] != labels.size:
        raise ValueError(f"{coeffs.values.shape[0]} coefficient patches for {labels.size} labels")
    return coeffs, labels


def _loss_and_mask_gradient(model: DifferentiableModel, coeffs: CoeffCube, labels: np.ndarray,
                            weights: np.ndarray, spec: WaveletSpec) -> Tuple[float, np.ndarray]:
    reconstruction = synthesize(coeffs, spec, weights)
    value = model.batch_loss(reconstruction, labels)
    grad_x = model.input_gradients(reconstruction, labels) / labels.size
    # ∂L/∂w_j = Σ ⟨∂L/∂X̂, c_j · basis_j⟩ over every patch pixel
    back = grad_x @ synthesis_matrix(spec, coeffs.bands).T
    gradient = (coeffs.values * back).reshape(-1, coeffs.length).sum(axis=0)
    if not (np.isfinite(value) and np.isfinite(gradient).all()):
        raise NumericError("Non-finite loss or mask gradient during band selection")
    return float(value), gradient


def mask_gradient(model: DifferentiableModel, coeffs: CoeffCube, labels, mask, spec: WaveletSpec,
                  subset=None) -> np.ndarray:
    """
    ∂L/∂w for the mean loss of the masked reconstruction.

    `coeffs` holds one (p, p, B′) coefficient patch per sample. The mask may be
    relaxed to real values; the gradient is exact for any w.
    """
    coeffs, labels = _subset(coeffs, labels, subset)
    weights = np.asarray(getattr(mask, "w", mask), dtype=np.float64)
    if weights.shape != (coeffs.length,):
        raise ValueError(f"Mask length {weights.shape[0]} does not match {coeffs.length} channels")
    return _loss_and_mask_gradient(model, coeffs, labels, weights, spec)[1]


def masked_loss(model: DifferentiableModel, coeffs: CoeffCube, labels, mask, spec: WaveletSpec,
                subset=None) -> float:
    coeffs, labels = _subset(coeffs, labels, subset)
    return float(model.batch_loss(synthesize(coeffs, spec, getattr(mask, "w", mask)), labels))


def candidate_losses(model: DifferentiableModel, coeffs: CoeffCube, labels, mask, spec: WaveletSpec,
                     candidates) -> np.ndarray:
    """True loss after switching on each candidate channel in turn"""
    base = np.asarray(getattr(mask, "w", mask), dtype=np.float64)
    losses = []
    for channel in candidates:
        trial = base.copy()
        trial[channel] = 1.0
        losses.append(masked_loss(model, coeffs, labels, trial, spec))
    return np.asarray(losses)


# --- selection ------------------------------------------------------------

def _pick(criterion: Criterion, candidates: np.ndarray, gradient: np.ndarray,
          losses: Optional[np.ndarray]) -> int:
    # numpy arg-extrema return the first hit, so ties go to the smaller index
    if criterion is Criterion.ABS_MIN:
        return int(candidates[np.argmin(np.abs(gradient[candidates]))])
    if criterion is Criterion.SIGNED_MIN:
        return int(candidates[np.argmin(gradient[candidates])])
    if criterion is Criterion.ABS_MAX:
        return int(candidates[np.argmax(np.abs(gradient[candidates]))])
    return int(candidates[np.argmin(losses)])


def evaluation_subset(count: int, size: int, seed: int) -> np.ndarray:
    """Fixed seeded subset of training patches, held constant across iterations"""
    if count == 0:
        raise ValueError("No training pixels to evaluate the selection loss on")
    if size >= count:
        return np.arange(count)
    return np.sort(make_rng(seed).choice(count, size=size, replace=False))


def select(cube: HyperCube, labels: LabelMap, classifier: DifferentiableModel, config: IwgsConfig,
           train_indices: Optional[np.ndarray] = None) -> Tuple[SelectionMask, SelectionTrace]:
    """
    Greedy channel selection.

    Starts from the central channel B′//2, then admits one channel per
    iteration according to `config.criterion`. The classifier is not retrained
    between iterations.
    """
    labels.check_matches(cube)
    if classifier.input_bands != cube.bands:
        raise ValueError(f"Classifier expects {classifier.input_bands} bands, cube has {cube.bands}")
    spec = config.wavelet
    length = spec.padded_length(cube.bands)
    if config.selected_total > length:
        raise ValueError(
            f"Cannot select {config.selected_total} of {length} channels "
            f"(num_bands={config.num_bands}, budget_mode={config.budget_mode.value})"
        )

    indices = labels.labeled_indices() if train_indices is None else np.asarray(train_indices, dtype=np.int64)
    indices = indices[evaluation_subset(indices.size, config.eval_subset_size, config.seed)]
    targets = labels.flat()[indices]
    if (targets < 1).any():
        raise DataError("Band selection was given unlabeled pixels")
    coeffs = analyze(patch_stack(cube, indices, classifier.patch_size), spec)

    if config.criterion is Criterion.ABS_MIN:
        logger.info("Selecting with abs_min (smallest |gradient|); signed_min picks the largest first-order loss drop")

    weights = np.zeros(length)
    center = length // 2
    weights[center] = 1.0
    trace = SelectionTrace(initial_channel=center)
    for iteration in range(1, config.loop_picks + 1):
        value, gradient = _loss_and_mask_gradient(classifier, coeffs, targets, weights, spec)
        candidates = np.flatnonzero(weights == 0)
        losses = None
        if config.criterion is Criterion.LOSS_DROP:
            losses = candidate_losses(classifier, coeffs, targets, weights, spec, candidates)
        chosen = _pick(config.criterion, candidates, gradient, losses)
        trace.records.append(TraceRecord(
            iteration=iteration,
            chosen=chosen,
            loss_before=value,
            candidates=[int(c) for c in candidates],
            gradient=[float(gradient[c]) for c in candidates],
            criterion=config.criterion.value,
        ))
        logger.debug("iteration %d: loss %.6f, picked channel %d (∂L/∂w=%.3e)",
                     iteration, value, chosen, gradient[chosen])
        weights[chosen] = 1.0

    trace.final_loss = masked_loss(classifier, coeffs, targets, weights, spec)
    mask = SelectionMask(weights.astype(np.int8), spec, cube.bands)
    logger.info("Selected %d of %d channels: %s", mask.selected_count, length, mask.indices)
    return mask, trace


def apply_selection(cube: HyperCube, mask: SelectionMask, spec: WaveletSpec) -> HyperCube:
    return masked_reconstruct(forward(cube, spec), mask, spec)


def selection_operator(mask, spec: WaveletSpec, bands: int) -> np.ndarray:
    """B×B matrix M such that apply_selection maps every pixel spectrum x to x @ M"""
    return synthesize(analyze(np.eye(bands), spec), spec, mask)


@dataclass(frozen=True, eq=False)
class SelectedBandModel:
    """A trained classifier preceded by a fixed band selection"""
    classifier: ClassifierParams
    operator: np.ndarray

    @classmethod
    def from_mask(cls, classifier: ClassifierParams, mask: SelectionMask, spec: WaveletSpec) -> "SelectedBandModel":
        return cls(classifier, selection_operator(mask, spec, classifier.input_bands))

    @property
    def patch_size(self) -> int:
        return self.classifier.patch_size

    @property
    def input_bands(self) -> int:
        return self.classifier.input_bands

    def select(self, patches) -> np.ndarray:
        return np.asarray(patches, dtype=np.float64) @ self.operator

    def batch_loss(self, patches: np.ndarray, labels: np.ndarray) -> float:
        return self.classifier.batch_loss(self.select(patches), labels)

    def input_gradients(self, patches: np.ndarray, labels: np.ndarray) -> np.ndarray:
        return self.classifier.input_gradients(self.select(patches), labels) @ self.operator.T

    def predict(self, patches) -> np.ndarray:
        return predict(self.classifier, self.select(patches))


# --- persistence ----------------------------------------------------------

def save_mask(mask: SelectionMask, path: Union[str, Path]) -> Path:
    if mask.spec is None or mask.bands is None:
        raise ValueError("Only masks that carry their wavelet spec and band count can be saved")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "version": MASK_FORMAT_VERSION,
        "wavelet": {"family": mask.spec.family.value, "levels": mask.spec.levels},
        "domain": mask.spec.domain.value,
        "length": len(mask),
        "bands": mask.bands,
        "indices": mask.indices,
    }
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
    return path


def load_mask(path: Union[str, Path]) -> SelectionMask:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Mask file not found: {path}")
    raw = json.loads(path.read_text())
    if raw.get("version") != MASK_FORMAT_VERSION:
        raise DataError(f"Unsupported mask version {raw.get('version')!r}")
    spec = WaveletSpec.from_dict({**raw["wavelet"], "domain": raw["domain"]})
    return SelectionMask.from_indices(int(raw["length"]), raw["indices"], spec, int(raw["bands"]))


def save_trace(trace: SelectionTrace, path: Union[str, Path]) -> Path:
    """One JSON record per iteration"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        for record in trace.records:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    return path


def load_trace(path: Union[str, Path]) -> SelectionTrace:
    trace = SelectionTrace()
    with open(path) as handle:
        for line in handle:
            if line.strip():
                trace.records.append(TraceRecord(**json.loads(line)))
    return trace
