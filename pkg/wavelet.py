"""
Orthonormal multilevel 1-D discrete wavelet transform along the spectral axis.

The transform is built as an explicit B′×B′ orthonormal matrix from the
periodized filter bank of the chosen family, so forward is `x @ A.T`,
inverse is `c @ A`, and the masked reconstruction used by band selection is
a plain linear map. Coefficients are laid out as
[approx_L | detail_L | ... | detail_1].
"""
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Union

import numpy as np
import pywt

from data import HyperCube


class WaveletFamily(Enum):
    HAAR = "haar"
    DAUBECHIES4 = "daubechies4"


class SelectionDomain(Enum):
    WAVELET = "wavelet"
    SPECTRAL = "spectral"   # identity transform, masks raw bands


# Daubechies-4 here is the four-tap filter, which PyWavelets calls db2
PYWT_NAMES = {WaveletFamily.HAAR: "haar", WaveletFamily.DAUBECHIES4: "db2"}


@dataclass(frozen=True)
class WaveletSpec:
    family: WaveletFamily = WaveletFamily.HAAR
    levels: int = 2
    domain: SelectionDomain = SelectionDomain.WAVELET

    def __post_init__(self):
        object.__setattr__(self, "family", WaveletFamily(self.family))
        object.__setattr__(self, "domain", SelectionDomain(self.domain))
        if int(self.levels) < 1:
            raise ValueError(f"Wavelet levels must be positive, got {self.levels}")

    def check_bands(self, bands: int):
        if self.domain is SelectionDomain.SPECTRAL:
            return
        if 2 ** self.levels > bands:
            raise ValueError(
                f"{self.levels} levels is too deep for {bands} bands (at most {int(np.log2(bands)) if bands > 0 else 0})"
            )

    def padded_length(self, bands: int) -> int:
        """Spectral length after symmetric padding to a multiple of 2^L"""
        self.check_bands(bands)
        if self.domain is SelectionDomain.SPECTRAL:
            return bands
        block = 2 ** self.levels
        return -(-bands // block) * block

    def to_dict(self) -> dict:
        return {"family": self.family.value, "levels": self.levels, "domain": self.domain.value}

    @classmethod
    def from_dict(cls, raw: dict) -> "WaveletSpec":
        return cls(WaveletFamily(raw.get("family", "haar")), int(raw.get("levels", 2)),
                   SelectionDomain(raw.get("domain", "wavelet")))


@dataclass(frozen=True, eq=False)
class CoeffCube:
    """Wavelet coefficients (..., B′) of a cube or patch stack, plus what inverse needs"""
    values: np.ndarray
    spec: WaveletSpec
    bands: int

    @property
    def length(self) -> int:
        return self.values.shape[-1]

    @property
    def padding(self) -> int:
        return self.length - self.bands


def _level_matrix(n: int, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    half = n // 2
    matrix = np.zeros((n, n))
    for k in range(half):
        for m in range(len(lo)):
            matrix[k, (2 * k + m) % n] += lo[m]
            matrix[half + k, (2 * k + m) % n] += hi[m]
    return matrix


@lru_cache(maxsize=64)
def _analysis_matrix(family: WaveletFamily, levels: int, domain: SelectionDomain, length: int) -> np.ndarray:
    if domain is SelectionDomain.SPECTRAL:
        matrix = np.eye(length)
    else:
        wavelet = pywt.Wavelet(PYWT_NAMES[family])
        lo, hi = np.asarray(wavelet.rec_lo), np.asarray(wavelet.rec_hi)
        matrix = np.eye(length)
        size = length
        for _ in range(levels):
            step = np.eye(length)
            step[:size, :size] = _level_matrix(size, lo, hi)
            matrix = step @ matrix
            size //= 2
    matrix.setflags(write=False)
    return matrix


def analysis_matrix(spec: WaveletSpec, bands: int) -> np.ndarray:
    """Orthonormal B′×B′ matrix A with coefficients = padded_spectrum @ A.T"""
    return _analysis_matrix(spec.family, spec.levels, spec.domain, spec.padded_length(bands))


def synthesis_matrix(spec: WaveletSpec, bands: int) -> np.ndarray:
    """B′×B map from coefficients back to the unpadded spectrum"""
    return analysis_matrix(spec, bands)[:, :bands]


def _pad_spectrum(values: np.ndarray, spec: WaveletSpec) -> np.ndarray:
    bands = values.shape[-1]
    extra = spec.padded_length(bands) - bands
    if extra == 0:
        return values
    widths = [(0, 0)] * (values.ndim - 1) + [(0, extra)]
    return np.pad(values, widths, mode="symmetric")


def analyze(values: np.ndarray, spec: WaveletSpec) -> CoeffCube:
    """Transform any array whose last axis is spectral (cube, patch or patch stack)"""
    values = np.asarray(values, dtype=np.float64)
    bands = values.shape[-1]
    coeffs = _pad_spectrum(values, spec) @ analysis_matrix(spec, bands).T
    return CoeffCube(coeffs, spec, bands)


def _mask_vector(mask, length: int) -> np.ndarray:
    weights = np.asarray(getattr(mask, "w", mask), dtype=np.float64)
    if weights.shape != (length,):
        raise ValueError(f"Mask length {weights.shape} does not match {length} coefficient channels")
    return weights


def synthesize(coeffs: CoeffCube, spec: WaveletSpec, mask=None) -> np.ndarray:
    """Array-level inverse, optionally masking (or weighting) channels first"""
    if coeffs.spec != spec:
        raise ValueError(f"Coefficients were produced with {coeffs.spec}, not {spec}")
    if coeffs.length != spec.padded_length(coeffs.bands):
        raise ValueError(
            f"Coefficient layout has {coeffs.length} channels, {spec} expects {spec.padded_length(coeffs.bands)}"
        )
    values = coeffs.values
    if mask is not None:
        values = values * _mask_vector(mask, coeffs.length)
    return values @ synthesis_matrix(spec, coeffs.bands)


def forward(cube: Union[HyperCube, np.ndarray], spec: WaveletSpec) -> CoeffCube:
    values = cube.values if isinstance(cube, HyperCube) else np.asarray(cube, dtype=np.float64)
    return analyze(values, spec)


def inverse(coeffs: CoeffCube, spec: WaveletSpec) -> HyperCube:
    return HyperCube(synthesize(coeffs, spec))


def masked_reconstruct(coeffs: CoeffCube, mask, spec: WaveletSpec) -> HyperCube:
    """𝒲⁻¹(X_W · w); accepts a SelectionMask or any real vector of length B′"""
    return HyperCube(synthesize(coeffs, spec, mask))


def basis_function(spec: WaveletSpec, bands: int, channel: int) -> np.ndarray:
    """Padded-domain synthesis of the one-hot coefficient vector e_channel"""
    unit = np.zeros(spec.padded_length(bands))
    unit[channel] = 1.0
    return unit @ analysis_matrix(spec, bands)
