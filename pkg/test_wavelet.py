#!/usr/bin/env python3
"""
Tests for the spectral wavelet transform and masked reconstruction
"""
import numpy as np
import pytest

from data import HyperCube
from wavelet import (CoeffCube, SelectionDomain, WaveletFamily, WaveletSpec, analysis_matrix, basis_function,
                     forward, inverse, masked_reconstruct)

SQRT2 = np.sqrt(2.0)
FAMILIES = [WaveletFamily.HAAR, WaveletFamily.DAUBECHIES4]


def test_haar_single_level_hand_example():
    spec = WaveletSpec(WaveletFamily.HAAR, 1)
    coeffs = forward(np.array([4.0, 2.0, 6.0, 8.0]), spec)
    assert np.allclose(coeffs.values, [6 / SQRT2, 14 / SQRT2, 2 / SQRT2, -2 / SQRT2], atol=1e-12)


def test_haar_constant_spectrum_has_no_detail():
    coeffs = forward(np.ones(4), WaveletSpec(WaveletFamily.HAAR, 1))
    assert np.allclose(coeffs.values, [SQRT2, SQRT2, 0, 0], atol=1e-12)


def test_haar_two_level_layout():
    # [a2 | d2 | d1 d1]
    coeffs = forward(np.array([1.0, 1.0, 1.0, 1.0]), WaveletSpec(WaveletFamily.HAAR, 2))
    assert np.allclose(coeffs.values, [2.0, 0.0, 0.0, 0.0], atol=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("levels", [1, 2, 3])
def test_analysis_matrix_is_orthonormal(family, levels):
    matrix = analysis_matrix(WaveletSpec(family, levels), 16)
    assert np.allclose(matrix @ matrix.T, np.eye(16), atol=1e-10)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("levels", [1, 2, 3])
def test_perfect_reconstruction_and_parseval(family, levels):
    spec = WaveletSpec(family, levels)
    spectra = np.random.default_rng(levels).normal(size=(1000, 16))
    coeffs = forward(spectra, spec)
    assert np.max(np.abs(inverse(CoeffCube(coeffs.values.reshape(10, 100, 16), spec, 16), spec).values
                         - spectra.reshape(10, 100, 16))) < 1e-6
    energy_in = np.linalg.norm(spectra, axis=1)
    energy_out = np.linalg.norm(coeffs.values, axis=1)
    assert np.max(np.abs(energy_out - energy_in) / energy_in) < 1e-6


@pytest.mark.parametrize("family", FAMILIES)
def test_padding_to_the_block_size_is_stripped(family):
    spec = WaveletSpec(family, 2)
    cube = HyperCube(np.random.default_rng(5).random((3, 4, 10)))
    coeffs = forward(cube, spec)
    assert coeffs.length == 12 and coeffs.padding == 2
    assert np.max(np.abs(inverse(coeffs, spec).values - cube.values)) < 1e-6


def test_levels_too_deep_are_rejected():
    with pytest.raises(ValueError, match="too deep"):
        forward(np.ones((1, 1, 4)), WaveletSpec(WaveletFamily.HAAR, 3))
    with pytest.raises(ValueError):
        WaveletSpec(WaveletFamily.HAAR, 0)


def test_inverse_rejects_foreign_coefficients():
    coeffs = forward(np.ones((1, 1, 8)), WaveletSpec(WaveletFamily.HAAR, 1))
    with pytest.raises(ValueError):
        inverse(coeffs, WaveletSpec(WaveletFamily.DAUBECHIES4, 1))


def test_zero_in_zero_out():
    spec = WaveletSpec()
    zeros = HyperCube(np.zeros((2, 2, 8)))
    assert np.all(forward(zeros, spec).values == 0)
    assert np.all(inverse(CoeffCube(np.zeros((2, 2, 8)), spec, 8), spec).values == 0)


def test_linearity():
    spec = WaveletSpec(WaveletFamily.DAUBECHIES4, 2)
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(2, 5, 8))
    combined = forward(2.5 * x - 0.5 * y, spec).values
    assert np.max(np.abs(combined - (2.5 * forward(x, spec).values - 0.5 * forward(y, spec).values))) < 1e-6


@pytest.mark.parametrize("family", FAMILIES)
def test_one_hot_coefficient_inverts_to_unit_basis_function(family):
    spec = WaveletSpec(family, 2)
    for channel in range(8):
        unit = np.zeros((1, 1, 8))
        unit[0, 0, channel] = 1.0
        reconstructed = inverse(CoeffCube(unit, spec, 8), spec).values[0, 0]
        assert np.allclose(reconstructed, basis_function(spec, 8, channel), atol=1e-12)
        assert abs(np.linalg.norm(reconstructed) - 1.0) < 1e-12


def test_masked_reconstruction_identities():
    spec = WaveletSpec(WaveletFamily.HAAR, 2)
    cube = HyperCube(np.random.default_rng(3).random((4, 4, 8)))
    coeffs = forward(cube, spec)
    assert np.max(np.abs(masked_reconstruct(coeffs, np.ones(8), spec).values - cube.values)) < 1e-6
    assert np.all(masked_reconstruct(coeffs, np.zeros(8), spec).values == 0)

    first = np.array([1, 0, 1, 0, 0, 1, 0, 0])
    second = 1 - first
    total = masked_reconstruct(coeffs, first, spec).values + masked_reconstruct(coeffs, second, spec).values
    assert np.max(np.abs(total - cube.values)) < 1e-6


def test_full_mask_round_trip_returns_the_coefficients():
    spec = WaveletSpec(WaveletFamily.DAUBECHIES4, 1)
    coeffs = forward(np.random.default_rng(8).random((2, 3, 8)), spec)
    again = forward(masked_reconstruct(coeffs, np.ones(8), spec), spec)
    assert np.max(np.abs(again.values - coeffs.values)) < 1e-6


def test_mask_length_must_match():
    spec = WaveletSpec()
    coeffs = forward(np.ones((1, 1, 8)), spec)
    with pytest.raises(ValueError, match="Mask length"):
        masked_reconstruct(coeffs, np.ones(7), spec)


def test_spectral_domain_is_the_identity():
    spec = WaveletSpec(domain=SelectionDomain.SPECTRAL)
    values = np.random.default_rng(1).random((2, 2, 7))
    coeffs = forward(values, spec)
    assert np.array_equal(coeffs.values, values)
    mask = np.array([1, 0, 0, 1, 0, 0, 1])
    assert np.array_equal(masked_reconstruct(coeffs, mask, spec).values, values * mask)


def test_spec_serialization():
    spec = WaveletSpec(WaveletFamily.DAUBECHIES4, 3, SelectionDomain.WAVELET)
    assert WaveletSpec.from_dict(spec.to_dict()) == spec
    assert WaveletSpec("haar", 2).family is WaveletFamily.HAAR


if __name__ == "__main__":
    pytest.main([__file__])
