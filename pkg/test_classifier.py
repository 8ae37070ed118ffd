#!/usr/bin/env python3
"""
Tests for the patch classifier: outputs, loss, analytic gradients, training
"""
import numpy as np
import pytest
from scipy.special import softmax

from classifier import (Activation, ClassifierParams, TrainConfig, forward, grad_input, grad_params, init_params,
                        input_gradients, load_params, loss, predict, predict_map, save_params, train)
from data import HyperCube, generate_synthetic, patch_stack
from errors import DataError, NumericError


def zero_params(patch_size=1, bands=2, hidden=3, classes=3, output_bias=None):
    dim = patch_size * patch_size * bands
    return ClassifierParams(
        hidden_weights=np.zeros((dim, hidden)),
        hidden_bias=np.zeros(hidden),
        output_weights=np.zeros((hidden, classes)),
        output_bias=np.zeros(classes) if output_bias is None else np.asarray(output_bias, dtype=float),
        patch_size=patch_size,
        input_bands=bands,
    )


def random_params(seed, patch_size=3, bands=2, hidden=4, classes=3, activation=Activation.TANH):
    rng = np.random.default_rng(seed)
    dim = patch_size * patch_size * bands
    return ClassifierParams(
        hidden_weights=rng.normal(scale=0.5, size=(dim, hidden)),
        hidden_bias=rng.normal(scale=0.1, size=hidden),
        output_weights=rng.normal(scale=0.5, size=(hidden, classes)),
        output_bias=rng.normal(scale=0.1, size=classes),
        patch_size=patch_size,
        input_bands=bands,
        feature_mean=rng.normal(scale=0.1, size=bands),
        feature_std=rng.uniform(0.5, 2.0, size=bands),
        activation=activation,
    )


def test_zero_weights_give_uniform_probabilities():
    probs = forward(zero_params(), np.ones((1, 1, 2)))
    assert np.allclose(probs, [1 / 3] * 3)


def test_output_bias_only():
    probs = forward(zero_params(output_bias=[2.0, 0.0, 0.0]), np.zeros((1, 1, 2)))
    assert np.allclose(probs, softmax([2.0, 0.0, 0.0]), atol=1e-12)


def test_probabilities_are_positive_and_sum_to_one():
    params = random_params(0)
    patches = np.random.default_rng(1).normal(size=(50, 3, 3, 2)) * 10
    probs = forward(params, patches)
    assert np.all(probs > 0)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_loss_hand_values():
    assert loss(zero_params(), np.zeros((4, 1, 1, 2)), [1, 2, 3, 1]) == pytest.approx(np.log(3))
    # true-class probabilities 0.5 and 0.25
    bias = np.log([0.5, 0.25, 0.25])
    value = loss(zero_params(output_bias=bias), np.zeros((2, 1, 1, 2)), [1, 2])
    assert value == pytest.approx(-(np.log(0.5) + np.log(0.25)) / 2, abs=1e-12)
    assert value == pytest.approx(1.0397, abs=1e-4)


def test_confident_predictions_have_near_zero_loss():
    assert loss(zero_params(output_bias=[60.0, 0.0, 0.0]), np.zeros((1, 1, 1, 2)), [1]) < 1e-20


def test_loss_rejects_unlabeled_and_empty_batches():
    with pytest.raises(ValueError):
        loss(zero_params(), np.zeros((1, 1, 1, 2)), [0])
    with pytest.raises(ValueError):
        loss(zero_params(), np.zeros((0, 1, 1, 2)), [])
    with pytest.raises(ValueError):
        forward(zero_params(), np.zeros((3, 3, 2)))


def numeric_gradient(f, x, step=1e-5):
    grad = np.zeros_like(x)
    flat, out = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        up = f()
        flat[i] = saved - step
        down = f()
        flat[i] = saved
        out[i] = (up - down) / (2 * step)
    return grad


@pytest.mark.parametrize("seed", range(50))
@pytest.mark.parametrize("activation", [Activation.TANH, Activation.LINEAR])
def test_grad_params_matches_finite_differences(seed, activation):
    params = random_params(seed, activation=activation)
    rng = np.random.default_rng(100 + seed)
    patches = rng.normal(size=(5, 3, 3, 2))
    labels = rng.integers(1, 4, size=5)
    analytic = grad_params(params, patches, labels)
    arrays = {name: np.array(getattr(params, name)) for name in
              ("hidden_weights", "hidden_bias", "output_weights", "output_bias")}

    def current_loss():
        trial = ClassifierParams(**arrays, patch_size=3, input_bands=2, feature_mean=params.feature_mean,
                                 feature_std=params.feature_std, activation=activation)
        return loss(trial, patches, labels)

    for name, grad in zip(arrays, analytic.arrays()):
        numeric = numeric_gradient(current_loss, arrays[name])
        assert np.allclose(grad, numeric, rtol=1e-4, atol=1e-7), name


@pytest.mark.parametrize("seed", range(100))
def test_grad_input_matches_finite_differences(seed):
    params = random_params(seed)
    patch = np.random.default_rng(200 + seed).normal(size=(3, 3, 2))
    label = seed % 3 + 1
    analytic = grad_input(params, patch, label)
    numeric = numeric_gradient(lambda: loss(params, patch[None], [label]), patch)
    assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_input_gradients_are_per_sample():
    params = random_params(3)
    patches = np.random.default_rng(4).normal(size=(4, 3, 3, 2))
    labels = np.array([1, 2, 3, 1])
    stacked = input_gradients(params, patches, labels)
    for i in range(4):
        assert np.allclose(stacked[i], grad_input(params, patches[i], labels[i]))


def test_zero_weights_give_zero_input_gradient():
    assert np.all(grad_input(zero_params(), np.ones((1, 1, 2)), 2) == 0)


def test_single_connected_coordinate():
    params = random_params(5, hidden=3)
    weights = np.zeros_like(params.hidden_weights)
    weights[7] = params.hidden_weights[7]
    sparse = ClassifierParams(weights, params.hidden_bias, params.output_weights, params.output_bias, 3, 2,
                              params.feature_mean, params.feature_std)
    grad = grad_input(sparse, np.random.default_rng(0).normal(size=(3, 3, 2)), 1).reshape(-1)
    assert grad[7] != 0
    assert np.all(np.delete(grad, 7) == 0)


def test_symmetric_stationary_point():
    params = zero_params(bands=1, classes=2)
    patches = np.array([[[[1.0]]], [[[-1.0]]], [[[1.0]]], [[[-1.0]]]])
    grads = grad_params(params, patches, [1, 1, 2, 2])
    assert max(np.max(np.abs(g)) for g in grads.arrays()) < 1e-8


def test_duplicating_the_batch_keeps_the_gradient():
    params = random_params(6)
    patches = np.random.default_rng(7).normal(size=(3, 3, 3, 2))
    labels = np.array([1, 2, 3])
    single = grad_params(params, patches, labels)
    double = grad_params(params, np.concatenate([patches, patches]), np.concatenate([labels, labels]))
    for a, b in zip(single.arrays(), double.arrays()):
        assert np.allclose(a, b, atol=1e-12)


def test_full_batch_descent_is_monotone():
    cube, labels = generate_synthetic(6, 6, 3, 2, [1], 0.1, seed=2)
    indices = labels.labeled_indices()
    patches = patch_stack(cube, indices, 1)
    targets = labels.flat()[indices]
    config = TrainConfig(learning_rate=1e-3, epochs=1, batch_size=len(indices), hidden_width=4, seed=1)
    params = train(patches, targets, config)
    previous = loss(params, patches, targets)
    for _ in range(49):
        grads = grad_params(params, patches, targets)
        params = ClassifierParams(*(p - 1e-3 * g for p, g in zip(
            (params.hidden_weights, params.hidden_bias, params.output_weights, params.output_bias), grads.arrays())),
            params.patch_size, params.input_bands, params.feature_mean, params.feature_std)
        current = loss(params, patches, targets)
        assert current <= previous + 1e-9
        previous = current


def separable_set():
    cube, labels = generate_synthetic(10, 10, 4, 2, [2], 0.05, seed=3)
    indices = labels.labeled_indices()
    return cube, labels, patch_stack(cube, indices, 1), labels.flat()[indices]


def test_training_separates_a_separable_set():
    _, _, patches, targets = separable_set()
    params = train(patches, targets, TrainConfig(epochs=200, hidden_width=8, seed=0))
    assert np.mean(predict(params, patches) == targets) >= 0.99


def test_training_is_deterministic_and_lowers_the_loss():
    _, _, patches, targets = separable_set()
    config = TrainConfig(epochs=20, hidden_width=8, seed=5)
    first = train(patches, targets, config)
    second = train(patches, targets, config)
    for a, b in zip((first.hidden_weights, first.output_weights), (second.hidden_weights, second.output_weights)):
        assert a.tobytes() == b.tobytes()
    initial = train(patches, targets, TrainConfig(epochs=0, hidden_width=8, seed=5))
    assert loss(first, patches, targets) <= loss(initial, patches, targets)


def test_zero_epochs_returns_the_initialization():
    _, _, patches, targets = separable_set()
    config = TrainConfig(epochs=0, hidden_width=8, seed=9)
    params = train(patches, targets, config)
    fresh = init_params(config, 1, 4, 2)
    assert np.array_equal(params.hidden_weights, fresh.hidden_weights)
    assert np.array_equal(params.output_weights, fresh.output_weights)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_diverging_training_raises_numeric_error():
    _, _, patches, targets = separable_set()
    with pytest.raises(NumericError):
        train(patches, targets, TrainConfig(learning_rate=1e300, epochs=5, hidden_width=2,
                                                    activation=Activation.LINEAR))


def test_predict_map_tie_break_and_constant_cube():
    cube = HyperCube(np.ones((4, 5, 2)))
    predicted = predict_map(zero_params(patch_size=3), cube)
    assert np.all(predicted.labels == 1)
    constant = predict_map(random_params(1), cube)
    assert np.all(constant.labels == constant.labels[0, 0])
    with pytest.raises(ValueError):
        predict_map(random_params(1, bands=3), cube)


def test_predict_map_follows_the_block_layout():
    cube, labels, patches, targets = separable_set()
    params = train(patches, targets, TrainConfig(epochs=200, hidden_width=8, seed=0))
    predicted = predict_map(params, cube)
    for cls in (1, 2):
        block = predicted.labels[labels.labels == cls]
        assert np.mean(block == cls) >= 0.95


def test_params_persistence(tmp_path):
    params = random_params(2, activation=Activation.LINEAR)
    loaded = load_params(save_params(params, tmp_path / "params.json"))
    assert loaded.activation is Activation.LINEAR
    for name in ("hidden_weights", "hidden_bias", "output_weights", "output_bias", "feature_mean", "feature_std"):
        assert np.array_equal(getattr(loaded, name), getattr(params, name))
    with pytest.raises(DataError):
        load_params(tmp_path / "missing.json")


def test_params_reject_non_finite_values():
    with pytest.raises(NumericError):
        zero_params(output_bias=[np.nan, 0.0, 0.0])


if __name__ == "__main__":
    pytest.main([__file__])
