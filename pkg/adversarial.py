"""
Perturbations for robustness evaluation: additive Gaussian atmospheric noise
and an untargeted L-infinity PGD attack, plus their composition.

Every function accepts a single p×p×B patch with an integer label or a
(N, p, p, B) stack with a label array.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from classifier import DifferentiableModel
from data import derive_seed, make_rng

logger = logging.getLogger(__name__)

StepCallback = Callable[[int, np.ndarray], None]


@dataclass(frozen=True)
class AttackConfig:
    """ε, α and σ are in standardized reflectance units"""
    epsilon: float = 0.03
    alpha: float = 0.01
    steps: int = 10
    noise_sigma: float = 0.0
    seed: int = 0
    random_start: bool = False

    def __post_init__(self):
        for name in ("epsilon", "alpha", "noise_sigma"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.steps < 1:
            raise ValueError(f"steps must be positive, got {self.steps}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.alpha > self.epsilon:
            logger.warning("PGD step alpha=%g exceeds epsilon=%g; every step will hit the ball boundary",
                           self.alpha, self.epsilon)


def _batch(patch_values, label):
    values = np.array(patch_values, dtype=np.float64)
    single = values.ndim == 3
    if single:
        values = values[None]
    if values.ndim != 4:
        raise ValueError(f"Expected a p×p×B patch or a patch stack, got shape {values.shape}")
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if labels.shape != (values.shape[0],):
        raise ValueError(f"Got {labels.size} labels for {values.shape[0]} patches")
    if labels.size and labels.min() < 1:
        raise ValueError("Cannot attack unlabeled samples")
    return values, labels, single


def project_linf(values: np.ndarray, center: np.ndarray, epsilon: float) -> np.ndarray:
    """
    Projection onto the closed L-infinity ball of radius ε around `center`.

    Clipping against center ± ε can round to a point just outside the ball, so
    such coordinates are stepped one ulp at a time toward the centre until
    |x − center| ≤ ε holds exactly in floating point.
    """
    projected = np.clip(values, center - epsilon, center + epsilon)
    outside = np.abs(projected - center) > epsilon
    while outside.any():
        projected[outside] = np.nextafter(projected[outside], center[outside])
        outside = np.abs(projected - center) > epsilon
    return projected


def atmospheric_noise(patch_values, noise_sigma: float, seed: int) -> np.ndarray:
    """Adds i.i.d. N(0, σ²) noise to every coordinate"""
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be non-negative, got {noise_sigma}")
    values = np.array(patch_values, dtype=np.float64)
    if noise_sigma == 0:
        return values
    return values + make_rng(seed).normal(0.0, noise_sigma, size=values.shape)


def pgd_attack(classifier: DifferentiableModel, patch_values, label, config: AttackConfig,
               on_step: Optional[StepCallback] = None) -> np.ndarray:
    """
    Untargeted PGD: `steps` rounds of x ← Π(x + α·sign(∇ₓℓ)) with the ball
    centred on the input. `on_step(step, x_adv)` sees every projected iterate.
    """
    original, labels, single = _batch(patch_values, label)
    if original.shape[1:] != (classifier.patch_size, classifier.patch_size, classifier.input_bands):
        raise ValueError(f"Patch shape {original.shape[1:]} does not match the classifier input")
    if config.epsilon == 0 or original.shape[0] == 0:
        return original[0] if single else original

    adversarial = original.copy()
    if config.random_start:
        rng = make_rng(derive_seed(config.seed, "pgd_start"))
        adversarial = project_linf(original + rng.uniform(-config.epsilon, config.epsilon, size=original.shape),
                                   original, config.epsilon)
    for step in range(1, config.steps + 1):
        gradient = classifier.input_gradients(adversarial, labels)
        adversarial = project_linf(adversarial + config.alpha * np.sign(gradient), original, config.epsilon)
        if on_step is not None:
            on_step(step, adversarial[0] if single else adversarial)
    return adversarial[0] if single else adversarial


def compound_perturb(classifier: DifferentiableModel, patch_values, label, config: AttackConfig,
                     on_step: Optional[StepCallback] = None, noise_seed: Optional[int] = None) -> np.ndarray:
    """
    Noise first, then PGD inside the ε-ball around the noised input.
    The noise stream defaults to one derived from `config.seed`.
    """
    if noise_seed is None:
        noise_seed = derive_seed(config.seed, "noise")
    noised = atmospheric_noise(patch_values, config.noise_sigma, noise_seed)
    return pgd_attack(classifier, noised, label, config, on_step)
