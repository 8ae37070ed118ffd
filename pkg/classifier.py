"""
Small differentiable patch classifier: per-band standardization, one hidden
layer, softmax output, with exact analytic gradients with respect to the
parameters and to the raw input patch.
"""
import json
import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import List, Optional, Protocol, Tuple, Union

import numpy as np
from scipy.special import log_softmax, softmax

from data import HyperCube, LabelMap, Patch, derive_seed, make_rng, patch_stack
from errors import DataError, NumericError

logger = logging.getLogger(__name__)

PARAMS_FORMAT_VERSION = 1
PREDICT_CHUNK_ROWS = 16


class Activation(Enum):
    TANH = "tanh"
    LINEAR = "linear"


class DifferentiableModel(Protocol):
    """What band selection and the attacks need from a classifier"""
    patch_size: int
    input_bands: int

    def batch_loss(self, patches: np.ndarray, labels: np.ndarray) -> float: ...

    def input_gradients(self, patches: np.ndarray, labels: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 100
    batch_size: int = 32
    hidden_width: int = 32
    seed: int = 0
    weight_init_scale: float = 1.0
    activation: Activation = Activation.TANH

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1 or self.hidden_width < 1:
            raise ValueError("batch_size and hidden_width must be positive")
        if not (self.weight_init_scale > 0 and np.isfinite(self.weight_init_scale)):
            raise ValueError(f"weight_init_scale must be positive, got {self.weight_init_scale}")


@dataclass(frozen=True, eq=False)
class ClassifierParams:
    hidden_weights: np.ndarray   # (p·p·B, hidden)
    hidden_bias: np.ndarray      # (hidden,)
    output_weights: np.ndarray   # (hidden, C)
    output_bias: np.ndarray      # (C,)
    patch_size: int
    input_bands: int
    feature_mean: Optional[np.ndarray] = None   # (B,)
    feature_std: Optional[np.ndarray] = None    # (B,)
    activation: Activation = Activation.TANH

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.feature_mean is None:
            object.__setattr__(self, "feature_mean", np.zeros(self.input_bands))
        if self.feature_std is None:
            object.__setattr__(self, "feature_std", np.ones(self.input_bands))
        for name in ("hidden_weights", "hidden_bias", "output_weights", "output_bias",
                     "feature_mean", "feature_std"):
            array = np.array(getattr(self, name), dtype=np.float64)
            if not np.isfinite(array).all():
                raise NumericError(f"Classifier parameter {name} is not finite")
            array.setflags(write=False)
            object.__setattr__(self, name, array)

        input_dim = self.patch_size * self.patch_size * self.input_bands
        hidden = self.hidden_bias.shape[0]
        classes = self.output_bias.shape[0]
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError(f"Patch size must be odd, got {self.patch_size}")
        if self.hidden_weights.shape != (input_dim, hidden):
            raise ValueError(f"hidden_weights should be {(input_dim, hidden)}, got {self.hidden_weights.shape}")
        if self.output_weights.shape != (hidden, classes):
            raise ValueError(f"output_weights should be {(hidden, classes)}, got {self.output_weights.shape}")
        if self.feature_mean.shape != (self.input_bands,) or self.feature_std.shape != (self.input_bands,):
            raise ValueError("Normalization statistics must have one entry per input band")
        if (self.feature_std <= 0).any():
            raise ValueError("Normalization std must be positive")

    @property
    def hidden_width(self) -> int:
        return self.hidden_bias.shape[0]

    @property
    def num_classes(self) -> int:
        return self.output_bias.shape[0]

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.patch_size, self.patch_size, self.input_bands)

    # model protocol used by band selection and attacks
    def batch_loss(self, patches: np.ndarray, labels: np.ndarray) -> float:
        return loss(self, patches, labels)

    def input_gradients(self, patches: np.ndarray, labels: np.ndarray) -> np.ndarray:
        return input_gradients(self, patches, labels)


@dataclass(frozen=True, eq=False)
class ParamGradients:
    hidden_weights: np.ndarray
    hidden_bias: np.ndarray
    output_weights: np.ndarray
    output_bias: np.ndarray

    def arrays(self) -> List[np.ndarray]:
        return [self.hidden_weights, self.hidden_bias, self.output_weights, self.output_bias]


@dataclass
class _Cache:
    z: np.ndarray        # standardized, flattened input (N, D)
    hidden: np.ndarray   # activations (N, hidden)
    logits: np.ndarray   # (N, C)


# --- forward / loss -------------------------------------------------------

def _as_batch(params: ClassifierParams, patch_values) -> Tuple[np.ndarray, bool]:
    if isinstance(patch_values, (list, tuple)) and patch_values and isinstance(patch_values[0], Patch):
        patch_values = np.stack([p.values for p in patch_values])
    values = np.asarray(patch_values, dtype=np.float64)
    single = values.ndim == 3
    if single:
        values = values[None]
    if values.ndim != 4 or values.shape[1:] != params.input_shape:
        raise ValueError(f"Patch shape {values.shape[-3:]} does not match classifier input {params.input_shape}")
    return values, single


def _labels_array(params: ClassifierParams, labels, count: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (count,):
        raise ValueError(f"Got {labels.shape[0]} labels for {count} patches")
    if count == 0:
        raise ValueError("Loss needs a non-empty batch")
    if labels.min() < 1 or labels.max() > params.num_classes:
        raise ValueError(f"Labels must lie in [1, {params.num_classes}]; unlabeled samples are not allowed")
    return labels


def _forward_pass(params: ClassifierParams, values: np.ndarray) -> _Cache:
    z = ((values - params.feature_mean) / params.feature_std).reshape(values.shape[0], -1)
    pre = z @ params.hidden_weights + params.hidden_bias
    hidden = np.tanh(pre) if params.activation is Activation.TANH else pre
    logits = hidden @ params.output_weights + params.output_bias
    return _Cache(z, hidden, logits)


def forward(params: ClassifierParams, patch_values) -> np.ndarray:
    """Class probabilities for one patch (C,) or a stack of patches (N, C)"""
    values, single = _as_batch(params, patch_values)
    probs = softmax(_forward_pass(params, values).logits, axis=1)
    return probs[0] if single else probs


def loss(params: ClassifierParams, patches, labels) -> float:
    """Mean cross-entropy of the true classes"""
    values, _ = _as_batch(params, patches)
    labels = _labels_array(params, labels, values.shape[0])
    log_probs = log_softmax(_forward_pass(params, values).logits, axis=1)
    return float(-np.mean(log_probs[np.arange(labels.size), labels - 1]))


def _backward(params: ClassifierParams, cache: _Cache, labels: np.ndarray, scale: np.ndarray):
    """Returns (d_logits, d_pre) for per-sample weights `scale`"""
    probs = softmax(cache.logits, axis=1)
    d_logits = probs
    d_logits[np.arange(labels.size), labels - 1] -= 1.0
    d_logits *= scale[:, None]
    d_hidden = d_logits @ params.output_weights.T
    if params.activation is Activation.TANH:
        d_pre = d_hidden * (1.0 - cache.hidden ** 2)
    else:
        d_pre = d_hidden
    return d_logits, d_pre


def grad_params(params: ClassifierParams, patches, labels) -> ParamGradients:
    """Exact gradient of the mean loss with respect to every parameter"""
    values, _ = _as_batch(params, patches)
    labels = _labels_array(params, labels, values.shape[0])
    cache = _forward_pass(params, values)
    d_logits, d_pre = _backward(params, cache, labels, np.full(labels.size, 1.0 / labels.size))
    return ParamGradients(
        hidden_weights=cache.z.T @ d_pre,
        hidden_bias=d_pre.sum(axis=0),
        output_weights=cache.hidden.T @ d_logits,
        output_bias=d_logits.sum(axis=0),
    )


def input_gradients(params: ClassifierParams, patches, labels) -> np.ndarray:
    """Per-sample ∂ℓ_i/∂x_i for a stack of raw patches (no 1/N factor)"""
    values, _ = _as_batch(params, patches)
    labels = _labels_array(params, labels, values.shape[0])
    cache = _forward_pass(params, values)
    _, d_pre = _backward(params, cache, labels, np.ones(labels.size))
    d_z = (d_pre @ params.hidden_weights.T).reshape(values.shape)
    return d_z / params.feature_std


def grad_input(params: ClassifierParams, patch_values, label: int) -> np.ndarray:
    """∂ℓ/∂x for a single p×p×B patch"""
    values, _ = _as_batch(params, patch_values)
    if values.shape[0] != 1:
        raise ValueError("grad_input takes a single patch; use input_gradients for stacks")
    return input_gradients(params, values, [label])[0]


def predict(params: ClassifierParams, patches) -> np.ndarray:
    """Arg-max class ids (1-based), ties going to the smaller class"""
    values, _ = _as_batch(params, patches)
    if values.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(_forward_pass(params, values).logits, axis=1).astype(np.int64) + 1


# --- training -------------------------------------------------------------

def init_params(config: TrainConfig, patch_size: int, input_bands: int, num_classes: int,
                feature_mean: Optional[np.ndarray] = None,
                feature_std: Optional[np.ndarray] = None) -> ClassifierParams:
    rng = make_rng(config.seed)
    input_dim = patch_size * patch_size * input_bands
    hidden_limit = config.weight_init_scale / np.sqrt(input_dim)
    output_limit = config.weight_init_scale / np.sqrt(config.hidden_width)
    return ClassifierParams(
        hidden_weights=rng.uniform(-hidden_limit, hidden_limit, size=(input_dim, config.hidden_width)),
        hidden_bias=np.zeros(config.hidden_width),
        output_weights=rng.uniform(-output_limit, output_limit, size=(config.hidden_width, num_classes)),
        output_bias=np.zeros(num_classes),
        patch_size=patch_size,
        input_bands=input_bands,
        feature_mean=feature_mean,
        feature_std=feature_std,
        activation=config.activation,
    )


def _center_statistics(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    center = values.shape[1] // 2
    pixels = values[:, center, center, :]
    mean = pixels.mean(axis=0)
    std = pixels.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


def train(patches, labels, config: TrainConfig, num_classes: Optional[int] = None) -> ClassifierParams:
    """
    Mini-batch gradient descent on the mean cross-entropy.

    Normalization statistics come from the centre pixels of the training
    patches and are stored with the returned parameters. The shuffle order of
    every epoch is drawn from the config seed, so equal inputs give equal
    parameters.
    """
    if isinstance(patches, (list, tuple)) and patches and isinstance(patches[0], Patch):
        labels = np.array([p.label for p in patches]) if labels is None else labels
        patches = np.stack([p.values for p in patches])
    values = np.asarray(patches, dtype=np.float64)
    if values.ndim != 4 or values.shape[0] == 0:
        raise ValueError("train needs a non-empty (N, p, p, B) patch stack")
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = int(num_classes or labels.max())
    if labels.min() < 1 or labels.max() > num_classes:
        raise ValueError(f"Training labels must lie in [1, {num_classes}]")

    mean, std = _center_statistics(values)
    params = init_params(config, values.shape[1], values.shape[3], num_classes, mean, std)
    if config.epochs == 0:
        return params

    rng = make_rng(derive_seed(config.seed, "shuffle"))
    weights = [np.array(a) for a in (params.hidden_weights, params.hidden_bias,
                                     params.output_weights, params.output_bias)]
    count = values.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(count)
        for start in range(0, count, config.batch_size):
            batch = order[start:start + config.batch_size]
            grads = grad_params(params, values[batch], labels[batch])
            for array, grad in zip(weights, grads.arrays()):
                array -= config.learning_rate * grad
            params = replace(params, hidden_weights=weights[0], hidden_bias=weights[1],
                             output_weights=weights[2], output_bias=weights[3])
        if (epoch + 1) % max(1, config.epochs // 5) == 0 or epoch + 1 == config.epochs:
            epoch_loss = loss(params, values, labels)
            if not np.isfinite(epoch_loss):
                raise NumericError(f"Training loss became {epoch_loss} at epoch {epoch + 1}")
            logger.debug("epoch %d/%d loss %.6f", epoch + 1, config.epochs, epoch_loss)
    return params


def predict_map(params: ClassifierParams, cube: HyperCube, patch_size: Optional[int] = None) -> LabelMap:
    """Classify every pixel, processing the cube in row chunks"""
    patch_size = patch_size or params.patch_size
    if patch_size != params.patch_size:
        raise ValueError(f"Classifier was trained on P{params.patch_size} patches, not P{patch_size}")
    if cube.bands != params.input_bands:
        raise ValueError(f"Cube has {cube.bands} bands, classifier expects {params.input_bands}")
    predictions = np.empty(cube.height * cube.width, dtype=np.int64)
    step = PREDICT_CHUNK_ROWS * cube.width
    for start in range(0, predictions.size, step):
        indices = np.arange(start, min(start + step, predictions.size))
        predictions[indices] = predict(params, patch_stack(cube, indices, patch_size))
    return LabelMap(predictions.reshape(cube.height, cube.width), params.num_classes)


# --- persistence ----------------------------------------------------------

def params_to_dict(params: ClassifierParams) -> dict:
    return {
        "format_version": PARAMS_FORMAT_VERSION,
        "architecture": {
            "patch_size": params.patch_size,
            "input_bands": params.input_bands,
            "hidden_width": params.hidden_width,
            "num_classes": params.num_classes,
            "activation": params.activation.value,
        },
        "hidden_weights": params.hidden_weights.ravel().tolist(),
        "hidden_bias": params.hidden_bias.tolist(),
        "output_weights": params.output_weights.ravel().tolist(),
        "output_bias": params.output_bias.tolist(),
        "normalization": {"mean": params.feature_mean.tolist(), "std": params.feature_std.tolist()},
    }


def params_from_dict(raw: dict) -> ClassifierParams:
    if raw.get("format_version") != PARAMS_FORMAT_VERSION:
        raise DataError(f"Unsupported classifier format version {raw.get('format_version')!r}")
    arch = raw["architecture"]
    patch_size, bands = int(arch["patch_size"]), int(arch["input_bands"])
    hidden, classes = int(arch["hidden_width"]), int(arch["num_classes"])
    input_dim = patch_size * patch_size * bands
    try:
        return ClassifierParams(
            hidden_weights=np.asarray(raw["hidden_weights"]).reshape(input_dim, hidden),
            hidden_bias=np.asarray(raw["hidden_bias"]),
            output_weights=np.asarray(raw["output_weights"]).reshape(hidden, classes),
            output_bias=np.asarray(raw["output_bias"]),
            patch_size=patch_size,
            input_bands=bands,
            feature_mean=np.asarray(raw["normalization"]["mean"]),
            feature_std=np.asarray(raw["normalization"]["std"]),
            activation=Activation(arch.get("activation", "tanh")),
        )
    except (KeyError, ValueError) as e:
        raise DataError(f"Malformed classifier parameters: {e}") from e


def save_params(params: ClassifierParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(params_to_dict(params), sort_keys=True) + "\n")
    return path


def load_params(path: Union[str, Path]) -> ClassifierParams:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Classifier file not found: {path}")
    return params_from_dict(json.loads(path.read_text()))
