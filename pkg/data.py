"""
Hyperspectral cube / ground-truth data model, file ingestion, synthetic cubes,
patch extraction, train/test splitting and the per-class quota undersampler.

Pixels are addressed by flat row-major index (row * width + col). Class ids
run from 1 to C; 0 marks an unlabeled pixel.
"""
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import ConfigError, DataError

logger = logging.getLogger(__name__)

CUBE_DTYPE = "f32le"
LABEL_DTYPE = "u16le"
HEADER_KEYS = {"height", "width", "bands", "dtype", "interleave", "data", "num_classes"}
MAX_CSV_SIDE = 64

# Synthetic class levels live in this reflectance range and must stay this far apart
SYNTH_LOW = 0.1
SYNTH_HIGH = 0.9
SYNTH_MIN_LEVEL_STEP = 0.02

# Table-1 land-cover classes (name, training count, total samples)
INDIAN_PINES_CLASSES: List[Tuple[str, int, int]] = [
    ("Corn-notill", 144, 1434),
    ("Corn-mintill", 84, 834),
    ("Corn", 24, 234),
    ("Grass pasture", 50, 497),
    ("Grass-trees", 75, 747),
    ("Hay windrowed", 49, 489),
    ("Soybean-notill", 97, 968),
    ("Soybean-mintill", 247, 2468),
    ("Soybean-clean", 62, 614),
    ("Wheat", 22, 212),
    ("Woods", 130, 1294),
    ("Bldg-Grass-Trees-Drives", 38, 380),
    ("Stone-Steel-Towers", 50, 95),
    ("Alfalfa", 6, 51),
    ("Grass-pasture-mowed", 13, 26),
    ("Oats", 10, 20),
]

HOUSTON_2013_CLASSES: List[str] = [
    "Healthy grass", "Stressed grass", "Synthetic grass", "Trees", "Soil",
    "Water", "Residential", "Commercial", "Road", "Highway", "Railway",
    "Parking lot 1", "Parking lot 2", "Tennis court", "Running track",
]


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox generator; every random draw in the package comes from one of these"""
    _check_seed(seed)
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(seed: int, *tags: Union[int, str]) -> int:
    """Derive an independent 64-bit sub-seed from a master seed and stage tags"""
    _check_seed(seed)
    entropy = [seed]
    for tag in tags:
        entropy.append(zlib.crc32(tag.encode("utf-8")) if isinstance(tag, str) else int(tag))
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def _check_seed(seed: int):
    if not isinstance(seed, (int, np.integer)) or not 0 <= int(seed) < 2 ** 64:
        raise ValueError(f"Seed must be an unsigned 64-bit integer, got {seed!r}")


@dataclass(frozen=True, eq=False)
class HyperCube:
    """H×W×B reflectance cube; read-only after construction"""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"HyperCube needs an H×W×B array with every side ≥ 1, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("HyperCube values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    def pixels(self) -> np.ndarray:
        """(H·W)×B view, row-major"""
        return self.values.reshape(-1, self.bands)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """H×W class map, 0 = unlabeled"""
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64)
        if labels.ndim != 2 or min(labels.shape) < 1:
            raise ValueError(f"LabelMap needs an H×W array, got shape {labels.shape}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labels.min() < 0 or labels.max() > self.num_classes:
            raise ValueError(f"Labels must lie in [0, {self.num_classes}]")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def flat(self) -> np.ndarray:
        return self.labels.ravel()

    def labeled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.flat() > 0)

    def class_counts(self) -> Dict[int, int]:
        values, counts = np.unique(self.flat()[self.flat() > 0], return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def check_matches(self, cube: HyperCube):
        if (self.height, self.width) != (cube.height, cube.width):
            raise ValueError(
                f"Label map {self.height}×{self.width} does not match cube {cube.height}×{cube.width}"
            )


@dataclass(frozen=True, eq=False)
class Patch:
    size: int
    center_row: int
    center_col: int
    values: np.ndarray
    label: int

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError(f"Patch size must be odd and positive, got {self.size}")
        if self.label < 1:
            raise ValueError("Unlabeled pixels never yield patches")


@dataclass(frozen=True)
class SplitSpec:
    per_class_train: Dict[int, int] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        _check_seed(self.seed)
        for cls, count in self.per_class_train.items():
            if int(cls) < 1 or int(count) < 0:
                raise ValueError(f"Invalid split entry class={cls} count={count}")

    @classmethod
    def uniform(cls, labels: LabelMap, count: int, seed: int = 0) -> "SplitSpec":
        """Same train count for every class, capped at the class population"""
        return cls({c: min(count, n) for c, n in labels.class_counts().items()}, seed)

    @classmethod
    def from_fraction(cls, labels: LabelMap, fraction: float, seed: int = 0) -> "SplitSpec":
        if not 0.0 < fraction <= 1.0:
            raise ValueError(f"Train fraction must be in (0, 1], got {fraction}")
        return cls({c: max(1, int(round(n * fraction))) for c, n in labels.class_counts().items()}, seed)


def indian_pines_split_spec(seed: int = 0) -> SplitSpec:
    return SplitSpec({i + 1: train for i, (_, train, _) in enumerate(INDIAN_PINES_CLASSES)}, seed)


def indian_pines_class_names() -> List[str]:
    return [name for name, _, _ in INDIAN_PINES_CLASSES]


def houston_2013_class_names() -> List[str]:
    return list(HOUSTON_2013_CLASSES)


# --- file ingestion -------------------------------------------------------

def _read_header(header_path: Union[str, Path]) -> Tuple[dict, Path]:
    header_path = Path(header_path)
    if not header_path.is_file():
        raise DataError(f"Header file not found: {header_path}")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"Header {header_path} is not valid JSON: {e}") from e
    if not isinstance(header, dict):
        raise DataError(f"Header {header_path} must be a JSON object")
    unknown = set(header) - HEADER_KEYS
    if unknown:
        raise DataError(f"Unknown header fields in {header_path}: {sorted(unknown)}")
    for key in ("height", "width", "dtype", "data"):
        if key not in header:
            raise DataError(f"Header {header_path} is missing '{key}'")
    raw_path = header_path.parent / header["data"]
    if not raw_path.is_file():
        raise DataError(f"Raw data file not found: {raw_path}")
    return header, raw_path


def _header_int(header: dict, key: str, header_path) -> int:
    value = header[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise DataError(f"Header {header_path} field '{key}' must be an integer, got {value!r}")
    return value


def _read_raw(raw_path: Path, dtype: str, count: int) -> np.ndarray:
    expected = count * np.dtype(dtype).itemsize
    actual = raw_path.stat().st_size
    if actual != expected:
        raise DataError(f"{raw_path} holds {actual} bytes, header shape needs {expected}")
    return np.fromfile(raw_path, dtype=dtype, count=count)


def load_cube(header_path: Union[str, Path]) -> HyperCube:
    """Load a band-interleaved-by-pixel little-endian float32 cube described by a .hdr.json header"""
    header, raw_path = _read_header(header_path)
    if header["dtype"] != CUBE_DTYPE:
        raise DataError(f"Unknown cube dtype {header['dtype']!r}; expected {CUBE_DTYPE!r}")
    if header.get("interleave", "bip") != "bip":
        raise DataError(f"Unsupported interleave {header['interleave']!r}; only 'bip' is read")
    if "bands" not in header:
        raise DataError(f"Cube header {header_path} is missing 'bands'")
    height, width, bands = (_header_int(header, key, header_path) for key in ("height", "width", "bands"))
    if min(height, width, bands) < 1:
        raise DataError(f"Cube header {header_path} has a non-positive dimension")
    values = _read_raw(raw_path, "<f4", height * width * bands)
    if not np.isfinite(values).all():
        raise DataError(f"{raw_path} contains NaN or Inf values")
    logger.info("Loaded cube %s: %d×%d×%d", raw_path.name, height, width, bands)
    return HyperCube(values.reshape(height, width, bands).astype(np.float64))


def load_labels(header_path: Union[str, Path]) -> LabelMap:
    """Load a little-endian uint16 ground-truth map (same header scheme, no band axis)"""
    header, raw_path = _read_header(header_path)
    if header["dtype"] != LABEL_DTYPE:
        raise DataError(f"Unknown label dtype {header['dtype']!r}; expected {LABEL_DTYPE!r}")
    if "bands" in header:
        raise DataError("Label headers have no band axis")
    height, width = (_header_int(header, key, header_path) for key in ("height", "width"))
    labels = _read_raw(raw_path, "<u2", height * width).reshape(height, width).astype(np.int64)
    num_classes = _header_int(header, "num_classes", header_path) if "num_classes" in header else int(labels.max())
    if labels.max() > num_classes or num_classes < 1:
        raise DataError(f"Labels in {raw_path} exceed num_classes={num_classes}")
    return LabelMap(labels, num_classes)


def save_cube(cube: HyperCube, header_path: Union[str, Path]) -> Path:
    header_path = Path(header_path)
    raw_name = header_path.name.replace(".hdr.json", "") + ".raw"
    header_path.parent.mkdir(parents=True, exist_ok=True)
    cube.values.astype("<f4").tofile(header_path.parent / raw_name)
    header = {"height": cube.height, "width": cube.width, "bands": cube.bands,
              "dtype": CUBE_DTYPE, "interleave": "bip", "data": raw_name}
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return header_path


def save_labels(labels: LabelMap, header_path: Union[str, Path]) -> Path:
    header_path = Path(header_path)
    raw_name = header_path.name.replace(".hdr.json", "") + ".raw"
    header_path.parent.mkdir(parents=True, exist_ok=True)
    labels.labels.astype("<u2").tofile(header_path.parent / raw_name)
    header = {"height": labels.height, "width": labels.width, "dtype": LABEL_DTYPE,
              "data": raw_name, "num_classes": labels.num_classes}
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return header_path


def load_cube_csv(path: Union[str, Path], height: int, width: int) -> HyperCube:
    """Small test fixtures: one pixel per line, B comma-separated columns, row-major"""
    if height > MAX_CSV_SIDE or width > MAX_CSV_SIDE:
        raise DataError(f"CSV cubes are limited to {MAX_CSV_SIDE}×{MAX_CSV_SIDE}")
    path = Path(path)
    if not path.is_file():
        raise DataError(f"CSV file not found: {path}")
    try:
        rows = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as e:
        raise DataError(f"Could not parse {path}: {e}") from e
    if rows.shape[0] != height * width:
        raise DataError(f"{path} has {rows.shape[0]} pixels, expected {height * width}")
    if not np.isfinite(rows).all():
        raise DataError(f"{path} contains NaN or Inf values")
    return HyperCube(rows.reshape(height, width, -1))


# --- synthetic cubes ------------------------------------------------------

def max_synthetic_classes() -> int:
    return int(round((SYNTH_HIGH - SYNTH_LOW) / SYNTH_MIN_LEVEL_STEP)) + 1


def _block_layout(height: int, width: int, num_classes: int) -> np.ndarray:
    grid_rows = max(1, int(math.isqrt(num_classes)))
    grid_cols = int(math.ceil(num_classes / grid_rows))
    if height < grid_rows or width < grid_cols:
        raise ValueError(
            f"A {height}×{width} image cannot hold a {grid_rows}×{grid_cols} block grid for {num_classes} classes"
        )
    block_row = (np.arange(height) * grid_rows) // height
    block_col = (np.arange(width) * grid_cols) // width
    block = block_row[:, None] * grid_cols + block_col[None, :]
    return np.minimum(block, num_classes - 1) + 1


def generate_synthetic(height: int, width: int, bands: int, num_classes: int,
                       informative_bands: Iterable[int], noise_sigma: float,
                       seed: int) -> Tuple[HyperCube, LabelMap]:
    """
    Block-layout cube whose class mean spectra differ only on the informative bands.

    Every class gets a distinct reflectance level on every informative band (the
    levels are rotated per band), so any single informative band separates all
    classes. All other bands follow one shared smooth base spectrum.
    """
    informative = sorted(set(int(b) for b in informative_bands))
    if not informative:
        raise ValueError("At least one informative band is required")
    if informative[0] < 0 or informative[-1] >= bands:
        raise ValueError(f"Informative bands must lie in [0, {bands})")
    if num_classes < 2:
        raise ValueError("Synthetic data needs at least two classes")
    if num_classes > max_synthetic_classes():
        raise ValueError(
            f"Only {max_synthetic_classes()} distinct class levels fit in "
            f"[{SYNTH_LOW}, {SYNTH_HIGH}] at step {SYNTH_MIN_LEVEL_STEP}"
        )
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")

    layout = _block_layout(height, width, num_classes)
    base = 0.4 + 0.2 * np.sin(2.0 * np.pi * np.arange(bands) / bands)
    levels = np.linspace(SYNTH_LOW, SYNTH_HIGH, num_classes)
    means = np.tile(base, (num_classes, 1))
    for position, band in enumerate(informative):
        means[:, band] = levels[(np.arange(num_classes) + position) % num_classes]

    values = means[layout - 1]
    if noise_sigma > 0:
        values = values + make_rng(seed).normal(0.0, noise_sigma, size=values.shape)
    return HyperCube(values), LabelMap(layout, num_classes)


# --- patches --------------------------------------------------------------

def _check_patch_size(patch_size: int):
    if patch_size < 1 or patch_size % 2 == 0:
        raise ValueError(f"Patch size must be an odd positive integer, got {patch_size}")


def _padded(cube: HyperCube, patch_size: int) -> np.ndarray:
    pad = patch_size // 2
    return np.pad(cube.values, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")


def patch_stack(cube: HyperCube, flat_indices: Iterable[int], patch_size: int) -> np.ndarray:
    """(N, p, p, B) patches centred on the given pixels, mirror padded at the borders"""
    _check_patch_size(patch_size)
    indices = np.asarray(flat_indices, dtype=np.int64).ravel()
    if indices.size == 0:
        return np.zeros((0, patch_size, patch_size, cube.bands))
    if indices.min() < 0 or indices.max() >= cube.height * cube.width:
        raise ValueError("Pixel index out of range")
    windows = sliding_window_view(_padded(cube, patch_size), (patch_size, patch_size), axis=(0, 1))
    rows, cols = np.divmod(indices, cube.width)
    return np.ascontiguousarray(windows[rows, cols].transpose(0, 2, 3, 1))


def extract_patches(cube: HyperCube, labels: LabelMap, patch_size: int) -> List[Patch]:
    """One patch per labeled pixel in row-major order"""
    _check_patch_size(patch_size)
    labels.check_matches(cube)
    indices = labels.labeled_indices()
    stack = patch_stack(cube, indices, patch_size)
    flat = labels.flat()
    patches = []
    for values, index in zip(stack, indices):
        row, col = divmod(int(index), cube.width)
        patches.append(Patch(patch_size, row, col, values, int(flat[index])))
    return patches


# --- splitting & sampling -------------------------------------------------

def split(labels: LabelMap, spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Disjoint train/test flat-index sets covering every labeled pixel"""
    counts = labels.class_counts()
    for cls, requested in spec.per_class_train.items():
        available = counts.get(int(cls), 0)
        if requested > available:
            raise ConfigError(f"Class {cls}: {requested} training samples requested, only {available} available")

    rng = make_rng(spec.seed)
    flat = labels.flat()
    train, test = [], []
    for cls in sorted(counts):
        members = np.flatnonzero(flat == cls)
        chosen = rng.permutation(members)[:int(spec.per_class_train.get(cls, 0))]
        train.append(chosen)
        test.append(np.setdiff1d(members, chosen, assume_unique=True))
    train_idx = np.sort(np.concatenate(train)) if train else np.zeros(0, dtype=np.int64)
    test_idx = np.sort(np.concatenate(test)) if test else np.zeros(0, dtype=np.int64)
    logger.info("Split: %d train / %d test pixels", train_idx.size, test_idx.size)
    return train_idx.astype(np.int64), test_idx.astype(np.int64)


def undersample(train_indices: np.ndarray, labels: LabelMap,
                quota: Union[int, Mapping[int, int]], seed: int) -> np.ndarray:
    """Cap each class at its quota by uniform sampling; classes are never removed"""
    train_indices = np.asarray(train_indices, dtype=np.int64)
    flat = labels.flat()
    classes = np.unique(flat[train_indices]) if train_indices.size else np.zeros(0, dtype=np.int64)

    def class_quota(cls: int) -> int:
        value = quota.get(cls, None) if isinstance(quota, Mapping) else quota
        if value is None:
            return int(np.sum(flat[train_indices] == cls))
        if int(value) < 1:
            raise ValueError(f"Undersampling quota must be ≥ 1, got {value}")
        return int(value)

    if not isinstance(quota, Mapping) and int(quota) < 1:
        raise ValueError(f"Undersampling quota must be ≥ 1, got {quota}")

    rng = make_rng(seed)
    kept = []
    for cls in classes:
        members = train_indices[flat[train_indices] == cls]
        limit = class_quota(int(cls))
        if members.size > limit:
            members = rng.choice(members, size=limit, replace=False)
        kept.append(members)
    result = np.sort(np.concatenate(kept)) if kept else np.zeros(0, dtype=np.int64)
    return result.astype(np.int64)


# --- normalization --------------------------------------------------------

def band_statistics(cube: HyperCube, indices: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-band mean and std over the given pixels; flat bands get std 1"""
    pixels = cube.pixels() if indices is None else cube.pixels()[np.asarray(indices, dtype=np.int64)]
    if pixels.shape[0] == 0:
        raise ValueError("Band statistics need at least one pixel")
    mean = pixels.mean(axis=0)
    std = pixels.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


def standardize(cube: HyperCube, mean: np.ndarray, std: np.ndarray) -> HyperCube:
    return HyperCube((cube.values - mean) / std)
