import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from dotenv import load_dotenv

from adversarial import AttackConfig
from classifier import TrainConfig
from data import (LabelMap, SplitSpec, houston_2013_class_names, indian_pines_class_names,
                  indian_pines_split_spec)
from errors import ConfigError
from iwgs import Criterion, IwgsConfig
from wavelet import WaveletSpec

# Load environment variables
load_dotenv()

SCHEMA_VERSION = 1
MAX_PATCH_SIZE = 15
DEFAULT_TRAIN_PER_CLASS = 20

DEFAULT_OUTPUT_DIR = os.getenv("IWGS_OUTPUT_DIR", "runs")
DEFAULT_SEED = int(os.getenv("IWGS_SEED", "0"))
DEFAULT_LOG_LEVEL = os.getenv("IWGS_LOG_LEVEL", "INFO")


class SamplingMode(Enum):
    NONE = "none"
    UNDERSAMPLE = "undersample"


class SplitPreset(Enum):
    INDIAN_PINES = "indian_pines"


class ClassNamePreset(Enum):
    INDIAN_PINES = "indian_pines"
    HOUSTON_2013 = "houston_2013"


CLASS_NAME_PRESETS = {
    ClassNamePreset.INDIAN_PINES: indian_pines_class_names,
    ClassNamePreset.HOUSTON_2013: houston_2013_class_names,
}


@dataclass(frozen=True)
class SyntheticSpec:
    height: int = 32
    width: int = 32
    bands: int = 16
    num_classes: int = 4
    informative_bands: Tuple[int, ...] = (3, 11)
    noise_sigma: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "informative_bands", tuple(int(b) for b in self.informative_bands))
        if min(self.height, self.width, self.bands) < 1:
            raise ValueError("Synthetic cube dimensions must be positive")
        if self.num_classes < 2:
            raise ValueError("Synthetic data needs at least two classes")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


@dataclass(frozen=True)
class DataConfig:
    synthetic: Optional[SyntheticSpec] = field(default_factory=SyntheticSpec)
    cube: Optional[str] = None      # header JSON of a raw cube
    labels: Optional[str] = None    # header JSON of a raw label map
    class_names: Optional[Tuple[str, ...]] = None
    class_name_preset: Optional[ClassNamePreset] = None

    def __post_init__(self):
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(str(n) for n in self.class_names))
        if self.class_name_preset is not None:
            object.__setattr__(self, "class_name_preset", ClassNamePreset(self.class_name_preset))
            if self.class_names is not None:
                raise ValueError("Set either class_names or class_name_preset, not both")
        files = (self.cube is not None, self.labels is not None)
        if any(files) and not all(files):
            raise ValueError("File input needs both 'cube' and 'labels'")
        if all(files) and self.synthetic is not None:
            raise ValueError("Choose either synthetic data or files, not both")
        if not any(files) and self.synthetic is None:
            raise ValueError("No data source configured")


@dataclass(frozen=True)
class SplitConfig:
    """At most one of the fields is set; none means DEFAULT_TRAIN_PER_CLASS per class"""
    per_class: Optional[int] = None
    fraction: Optional[float] = None
    counts: Optional[Dict[int, int]] = None
    preset: Optional[SplitPreset] = None

    def __post_init__(self):
        if self.preset is not None:
            object.__setattr__(self, "preset", SplitPreset(self.preset))
        if self.counts is not None:
            object.__setattr__(self, "counts", {int(k): int(v) for k, v in self.counts.items()})
        chosen = [f.name for f in fields(self) if getattr(self, f.name) is not None]
        if len(chosen) > 1:
            raise ValueError(f"Split takes one of per_class, fraction, counts or preset, got {chosen}")
        if self.per_class is not None and self.per_class < 1:
            raise ValueError("per_class must be positive")

    def to_spec(self, labels: LabelMap, seed: int) -> SplitSpec:
        if self.preset is SplitPreset.INDIAN_PINES:
            return replace(indian_pines_split_spec(), seed=seed)
        if self.counts is not None:
            return SplitSpec(dict(self.counts), seed)
        if self.fraction is not None:
            return SplitSpec.from_fraction(labels, self.fraction, seed)
        return SplitSpec.uniform(labels, self.per_class or DEFAULT_TRAIN_PER_CLASS, seed)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    iwgs: IwgsConfig = field(default_factory=IwgsConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    sampling: SamplingMode = SamplingMode.NONE
    quota: int = 50
    patch_sizes: Tuple[int, ...] = (3,)
    repeats: int = 1
    seed: int = DEFAULT_SEED
    output_dir: str = DEFAULT_OUTPUT_DIR

    def __post_init__(self):
        object.__setattr__(self, "sampling", SamplingMode(self.sampling))
        object.__setattr__(self, "patch_sizes", tuple(int(p) for p in self.patch_sizes))
        sizes = self.patch_sizes
        if not sizes:
            raise ConfigError("At least one patch size is required")
        if any(p < 1 or p > MAX_PATCH_SIZE or p % 2 == 0 for p in sizes):
            raise ConfigError(f"Patch sizes must be odd and within [1, {MAX_PATCH_SIZE}], got {list(sizes)}")
        if list(sizes) != sorted(set(sizes)):
            raise ConfigError(f"Patch sizes must be strictly ascending, got {list(sizes)}")
        if self.quota < 1:
            raise ConfigError(f"quota must be positive, got {self.quota}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be positive, got {self.repeats}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def class_names(self, num_classes: int):
        names = self.data.class_names
        if self.data.class_name_preset is not None:
            names = tuple(CLASS_NAME_PRESETS[self.data.class_name_preset]())
        if names is None and self.split.preset is SplitPreset.INDIAN_PINES:
            names = tuple(indian_pines_class_names())
        if names is None:
            return [f"Class {c}" for c in range(1, num_classes + 1)]
        if len(names) != num_classes:
            raise ConfigError(f"{len(names)} class names configured for {num_classes} classes")
        return list(names)


# --- (de)serialization ----------------------------------------------------

def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build(cls, raw, section: str, exclude=("seed",)):
    if not isinstance(raw, dict):
        raise ConfigError(f"'{section}' must be a JSON object")
    allowed = {f.name for f in fields(cls)} - set(exclude)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"Unknown key(s) in '{section}': {', '.join(unknown)}")
    try:
        return cls(**raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid '{section}' section: {e}") from e


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Strict parse: unknown keys at any level are rejected"""
    if not isinstance(raw, dict):
        raise ConfigError("Config must be a JSON object")
    raw = dict(raw)
    version = raw.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"Unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")

    sections = {}
    if "data" in raw:
        data = dict(raw["data"]) if isinstance(raw["data"], dict) else raw["data"]
        if isinstance(data, dict):
            if data.get("synthetic") is not None:
                data["synthetic"] = _build(SyntheticSpec, data["synthetic"], "data.synthetic", exclude=())
            elif "cube" in data or "labels" in data:
                data.setdefault("synthetic", None)
        sections["data"] = _build(DataConfig, data, "data", exclude=())
    if "split" in raw:
        sections["split"] = _build(SplitConfig, raw["split"], "split", exclude=())
    if "train" in raw:
        sections["train"] = _build(TrainConfig, raw["train"], "train")
    if "iwgs" in raw:
        iwgs = dict(raw["iwgs"]) if isinstance(raw["iwgs"], dict) else raw["iwgs"]
        if isinstance(iwgs, dict) and "wavelet" in iwgs:
            iwgs["wavelet"] = _build(WaveletSpec, iwgs["wavelet"], "iwgs.wavelet", exclude=())
        sections["iwgs"] = _build(IwgsConfig, iwgs, "iwgs")
    if "attack" in raw:
        sections["attack"] = _build(AttackConfig, raw["attack"], "attack")
    top = {k: v for k, v in raw.items() if k not in sections}
    return _build(ExperimentConfig, {**top, **sections}, "config", exclude=())


def config_to_dict(config: ExperimentConfig) -> dict:
    raw = _plain(asdict(config))
    for section in ("train", "iwgs", "attack"):
        raw[section].pop("seed", None)
    raw["schema_version"] = SCHEMA_VERSION
    return raw


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form; the output directory is not part of it"""
    raw = config_to_dict(config)
    raw.pop("output_dir")
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    return config_from_dict(raw)


def save_config(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n")
    return path


def with_overrides(config: ExperimentConfig, seed: Optional[int] = None, output_dir: Optional[str] = None,
                   patch_size: Optional[int] = None, num_bands: Optional[int] = None,
                   criterion: Optional[str] = None, epsilon: Optional[float] = None,
                   alpha: Optional[float] = None, steps: Optional[int] = None,
                   noise_sigma: Optional[float] = None, quota: Optional[int] = None) -> ExperimentConfig:
    """Apply command-line overrides; None leaves a field alone"""
    try:
        iwgs_changes = {k: v for k, v in (("num_bands", num_bands), ("criterion", criterion)) if v is not None}
        if "criterion" in iwgs_changes:
            iwgs_changes["criterion"] = Criterion(iwgs_changes["criterion"])
        attack_changes = {k: v for k, v in (("epsilon", epsilon), ("alpha", alpha), ("steps", steps),
                                             ("noise_sigma", noise_sigma)) if v is not None}
        top = {k: v for k, v in (("seed", seed), ("output_dir", output_dir), ("quota", quota)) if v is not None}
        if patch_size is not None:
            top["patch_sizes"] = (patch_size,)
        return replace(
            config,
            iwgs=replace(config.iwgs, **iwgs_changes),
            attack=replace(config.attack, **attack_changes),
            **top,
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from e
