"""
Experiment orchestration: the staged pipeline (split, baseline training, band
selection, retraining, clean and attacked evaluation, reports, maps), the
patch-size sweep and the robustness sweep.

Every stage writes its artifact under the run directory
<output_dir>/P<patch>/r<repeat>/. A later run with the same config hash
reuses whatever upstream artifacts are already there.
"""
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from matplotlib.colors import hsv_to_rgb
from PIL import Image

from adversarial import compound_perturb
from classifier import load_params, predict, predict_map, save_params, train
from data import (HyperCube, LabelMap, band_statistics, derive_seed, generate_synthetic, load_cube,
                  load_labels, make_rng, patch_stack, split, standardize, undersample)
from errors import ConfigError, IwgsError, StageError
from experiment_config import (MAX_PATCH_SIZE, ExperimentConfig, SamplingMode, SyntheticSpec,
                               config_hash, config_to_dict)
from iwgs import SelectedBandModel, load_mask, save_mask, save_trace, select, selection_operator
from metrics import ConfusionMatrix, accumulate, average_accuracy, kappa, overall_accuracy, per_class_report
from report_handler import (class_report_frame, format_class_report, kappa_frame, sweep_frame,
                            write_table)
from storage import RUNS_DB, RunStorage

logger = logging.getLogger(__name__)

STAGES = ("load", "split", "baseline", "select", "retrain", "evaluate", "attack", "report", "map")
EVAL_CHUNK = 256

# Colour map brightness for class colours; class 0 is always black
PALETTE_SATURATION = 0.85
PALETTE_VALUE = 0.95


@dataclass
class RunRecord:
    config_hash: str
    patch_size: int
    repeat: int
    output_dir: str
    class_names: List[str] = field(default_factory=list)
    artifacts: Dict[str, str] = field(default_factory=dict)
    metrics: Dict[str, dict] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    run_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "patch_size": self.patch_size,
            "repeat": self.repeat,
            "output_dir": self.output_dir,
            "class_names": self.class_names,
            "artifacts": self.artifacts,
            "metrics": self.metrics,
            "timings": self.timings,
            "run_id": self.run_id,
        }

    def confusion(self, name: str) -> ConfusionMatrix:
        return ConfusionMatrix(np.array(self.metrics[name]["confusion"]))

    def report(self, name: str = "clean"):
        return per_class_report(self.confusion(name), self.class_names)


def _summary(cm: ConfusionMatrix) -> dict:
    return {
        "overall_accuracy": overall_accuracy(cm),
        "average_accuracy": average_accuracy(cm),
        "kappa": kappa(cm),
        "confusion": cm.counts.tolist(),
    }


def _write_json(path: Path, document) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
    return path


def _read_json(path: Path):
    return json.loads(path.read_text())


def synthetic_scene(spec: SyntheticSpec, master_seed: int) -> Tuple[HyperCube, LabelMap]:
    """The synthetic cube a run with this master seed builds in memory"""
    return generate_synthetic(spec.height, spec.width, spec.bands, spec.num_classes, spec.informative_bands,
                              spec.noise_sigma, derive_seed(master_seed, "synthetic"))


class Pipeline:
    """One run of the method at a single patch size and repeat"""

    def __init__(self, config: ExperimentConfig, patch_size: Optional[int] = None, repeat: int = 0,
                 output_dir: Optional[Union[str, Path]] = None):
        self.config = config
        self.patch_size = int(patch_size if patch_size is not None else config.patch_sizes[0])
        if self.patch_size < 1 or self.patch_size > MAX_PATCH_SIZE or self.patch_size % 2 == 0:
            raise ConfigError(f"Patch size must be odd and within [1, {MAX_PATCH_SIZE}], got {self.patch_size}")
        if repeat < 0:
            raise ConfigError(f"repeat must be non-negative, got {repeat}")
        self.repeat = repeat
        self.root = Path(output_dir if output_dir is not None else config.output_dir)
        self.run_dir = self.root / f"P{self.patch_size}" / f"r{repeat}"
        self.config_hash = config_hash(config)
        # the patch size never enters a seed, so every column of a sweep shares its split
        self.seed = derive_seed(config.seed, "repeat", repeat)
        self.record = RunRecord(self.config_hash, self.patch_size, repeat, str(self.run_dir))

        self.resumable = False
        self.raw_cube: Optional[HyperCube] = None
        self.cube: Optional[HyperCube] = None
        self.labels: Optional[LabelMap] = None
        self.train_indices: Optional[np.ndarray] = None
        self.test_indices: Optional[np.ndarray] = None
        self.baseline = None
        self.mask = None
        self.params = None
        self.model: Optional[SelectedBandModel] = None
        self.confusions: Dict[str, ConfusionMatrix] = {}

    # --- helpers ---------------------------------------------------------

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def _reuse(self, *names: str) -> bool:
        return self.resumable and all(self.path(n).is_file() for n in names)

    def _artifact(self, key: str, name: str):
        self.record.artifacts[key] = name

    def _open_run_dir(self):
        marker = self.path("config.json")
        if marker.is_file():
            try:
                previous = _read_json(marker)
                self.resumable = (previous.get("config_hash") == self.config_hash
                                  and previous.get("patch_size") == self.patch_size
                                  and previous.get("repeat") == self.repeat)
            except json.JSONDecodeError:
                self.resumable = False
        if self.resumable:
            logger.info("Resuming %s from persisted artifacts", self.run_dir)
        elif self.run_dir.is_dir():
            # artifacts of another config must never be picked up once the marker names this one
            stale = [p for p in self.run_dir.iterdir() if p.is_file()]
            for path in stale:
                path.unlink()
            if stale:
                logger.info("Cleared %d artifact(s) of a different config from %s", len(stale), self.run_dir)
        _write_json(marker, {
            "config": config_to_dict(self.config),
            "config_hash": self.config_hash,
            "patch_size": self.patch_size,
            "repeat": self.repeat,
        })
        self._artifact("config", "config.json")

    def _patches(self, indices: np.ndarray) -> np.ndarray:
        return patch_stack(self.cube, indices, self.patch_size)

    def _chunks(self, indices: np.ndarray):
        for number, start in enumerate(range(0, indices.size, EVAL_CHUNK)):
            yield number, indices[start:start + EVAL_CHUNK]

    # --- stages ----------------------------------------------------------

    def load(self):
        source = self.config.data
        if source.synthetic is not None:
            self.raw_cube, self.labels = synthetic_scene(source.synthetic, self.config.seed)
        else:
            self.raw_cube = load_cube(source.cube)
            self.labels = load_labels(source.labels)
        self.labels.check_matches(self.raw_cube)
        self.record.class_names = self.config.class_names(self.labels.num_classes)
        logger.info("Loaded %d×%d×%d cube with %d classes", self.raw_cube.height, self.raw_cube.width,
                    self.raw_cube.bands, self.labels.num_classes)

    def split(self):
        if self._reuse("split.json"):
            saved = _read_json(self.path("split.json"))
            self.train_indices = np.array(saved["train"], dtype=np.int64)
            self.test_indices = np.array(saved["test"], dtype=np.int64)
        else:
            spec = self.config.split.to_spec(self.labels, derive_seed(self.seed, "split"))
            train_indices, self.test_indices = split(self.labels, spec)
            available = int(train_indices.size)
            if self.config.sampling is SamplingMode.UNDERSAMPLE:
                train_indices = undersample(train_indices, self.labels, self.config.quota,
                                            derive_seed(self.seed, "undersample"))
                logger.info("Undersampled training set to %d of %d pixels", train_indices.size, available)
            self.train_indices = train_indices
            _write_json(self.path("split.json"), {
                "train": self.train_indices.tolist(),
                "test": self.test_indices.tolist(),
                "train_available": available,
                "sampling": self.config.sampling.value,
            })
        self._artifact("split", "split.json")
        if self.train_indices.size == 0:
            raise ValueError("The split left no training pixels")
        # ε and σ are expressed in these standardized units
        mean, std = band_statistics(self.raw_cube, self.train_indices)
        self.cube = standardize(self.raw_cube, mean, std)

    def _train(self, patches: np.ndarray, stage: str):
        config = replace(self.config.train, seed=derive_seed(self.seed, stage))
        return train(patches, self.labels.flat()[self.train_indices], config, num_classes=self.labels.num_classes)

    def train_baseline(self):
        name = "baseline_params.json"
        if self._reuse(name):
            self.baseline = load_params(self.path(name))
        else:
            self.baseline = self._train(self._patches(self.train_indices), "baseline")
            save_params(self.baseline, self.path(name))
        self._artifact("baseline_params", name)

    def select_bands(self):
        if self._reuse("mask.json", "selection_trace.jsonl"):
            self.mask = load_mask(self.path("mask.json"))
        else:
            iwgs_config = replace(self.config.iwgs, seed=derive_seed(self.seed, "iwgs"))
            self.mask, trace = select(self.cube, self.labels, self.baseline, iwgs_config, self.train_indices)
            save_mask(self.mask, self.path("mask.json"))
            save_trace(trace, self.path("selection_trace.jsonl"))
        self._artifact("mask", "mask.json")
        self._artifact("trace", "selection_trace.jsonl")

    def retrain(self):
        name = "params.json"
        if self._reuse(name):
            self.params = load_params(self.path(name))
        else:
            operator = selection_operator(self.mask, self.config.iwgs.wavelet, self.cube.bands)
            self.params = self._train(self._patches(self.train_indices) @ operator, "retrain")
            save_params(self.params, self.path(name))
        self.model = SelectedBandModel.from_mask(self.params, self.mask, self.config.iwgs.wavelet)
        self._artifact("params", name)

    def _evaluate(self, predict_chunk) -> ConfusionMatrix:
        truth = self.labels.flat()
        cm = ConfusionMatrix.zeros(self.labels.num_classes)
        for number, chunk in self._chunks(self.test_indices):
            predicted = predict_chunk(number, chunk, self._patches(chunk))
            cm = cm + accumulate(truth[chunk], predicted, self.labels.num_classes)
        return cm

    def _store_metrics(self, name: str, cm: ConfusionMatrix):
        self.confusions[name] = cm
        self.record.metrics[name] = _summary(cm)

    def evaluate(self):
        name = "evaluation.json"
        if self._reuse(name):
            saved = _read_json(self.path(name))
            for key in ("baseline", "clean"):
                self._store_metrics(key, ConfusionMatrix(np.array(saved[key]["confusion"])))
        else:
            self._store_metrics("baseline", self._evaluate(lambda n, idx, x: predict(self.baseline, x)))
            self._store_metrics("clean", self._evaluate(lambda n, idx, x: self.model.predict(x)))
            _write_json(self.path(name), {k: self.record.metrics[k] for k in ("baseline", "clean")})
        self._artifact("evaluation", name)
        logger.info("Clean OA %.4f (all bands %.4f)", self.record.metrics["clean"]["overall_accuracy"],
                    self.record.metrics["baseline"]["overall_accuracy"])

    def attack(self):
        name = "attacked.json"
        if self._reuse(name):
            self._store_metrics("attacked", ConfusionMatrix(np.array(_read_json(self.path(name))["confusion"])))
        else:
            config = replace(self.config.attack, seed=derive_seed(self.seed, "attack"))
            truth = self.labels.flat()

            def perturbed_predictions(number, indices, patches):
                perturbed = compound_perturb(self.model, patches, truth[indices], config,
                                             noise_seed=derive_seed(config.seed, "noise", number))
                return self.model.predict(perturbed)

            self._store_metrics("attacked", self._evaluate(perturbed_predictions))
            _write_json(self.path(name), self.record.metrics["attacked"])
        self._artifact("attacked", name)
        logger.info("Attacked kappa %.4f (clean %.4f)", self.record.metrics["attacked"]["kappa"],
                    self.record.metrics["clean"]["kappa"])

    def report(self):
        titles = {"baseline": "All bands", "clean": "Selected bands", "attacked": "Selected bands under attack"}
        sections = []
        for key, title in titles.items():
            report = per_class_report(self.confusions[key], self.record.class_names)
            write_table(class_report_frame(report), self.path(f"report_{key}"))
            self._artifact(f"report_{key}", f"report_{key}.csv")
            sections.append(format_class_report(report, title))
        self.path("report.md").write_text("\n".join(sections))
        self._artifact("report", "report.md")

    def render_maps(self):
        masked = HyperCube(self.model.select(self.cube.values))
        predicted = predict_map(self.params, masked)
        render_map(predicted, self.config.seed, self.path("map.png"))
        render_map(self.labels, self.config.seed, self.path("ground_truth.png"))
        self._artifact("map", "map.png")
        self._artifact("ground_truth", "ground_truth.png")

    # --- driver ----------------------------------------------------------

    def run(self, until: Optional[str] = None, storage: Optional[RunStorage] = None) -> RunRecord:
        """Run the stages in order, stopping after `until` when given"""
        if until is not None and until not in STAGES:
            raise ConfigError(f"Unknown stage {until!r}; choose from {', '.join(STAGES)}")
        steps = {
            "load": self.load,
            "split": self.split,
            "baseline": self.train_baseline,
            "select": self.select_bands,
            "retrain": self.retrain,
            "evaluate": self.evaluate,
            "attack": self.attack,
            "report": self.report,
            "map": self.render_maps,
        }
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self._open_run_dir()
        for stage in STAGES:
            started = time.perf_counter()
            logger.info("[P%d r%d] %s", self.patch_size, self.repeat, stage)
            try:
                steps[stage]()
            except StageError:
                raise
            except Exception as e:
                raise StageError(stage, e) from e
            self.record.timings[stage] = round(time.perf_counter() - started, 6)
            if stage == until:
                break

        if "clean" in self.record.metrics:
            storage = storage or RunStorage(self.root / RUNS_DB)
            self.record.run_id = storage.save_run(self.config_hash, self.patch_size, self.run_dir, {
                "overall_accuracy": self.record.metrics["clean"]["overall_accuracy"],
                "average_accuracy": self.record.metrics["clean"]["average_accuracy"],
                "kappa": self.record.metrics["clean"]["kappa"],
                "kappa_attacked": self.record.metrics.get("attacked", {}).get("kappa"),
            }, repeat=self.repeat)
        _write_json(self.path("run_record.json"), self.record.to_dict())
        return self.record


def run_pipeline(config: ExperimentConfig, patch_size: Optional[int] = None, repeat: int = 0,
                 output_dir: Optional[Union[str, Path]] = None, until: Optional[str] = None) -> RunRecord:
    return Pipeline(config, patch_size, repeat, output_dir).run(until)


# --- sweeps ---------------------------------------------------------------

@dataclass
class PatchSweep:
    records: Dict[int, RunRecord]
    table: pd.DataFrame
    paths: Dict[str, Path]

    @property
    def reports(self):
        return {size: record.report("clean") for size, record in self.records.items()}


@dataclass
class RobustnessSweep:
    attacked: Dict[int, float]
    clean: Dict[int, float]
    per_repeat: Dict[int, List[float]]
    table: pd.DataFrame
    paths: Dict[str, Path]


def patch_sweep(config: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None) -> PatchSweep:
    """One pipeline per patch size (shared split and seed); classes as rows, P<k> as columns"""
    root = Path(output_dir if output_dir is not None else config.output_dir)
    records = {size: run_pipeline(config, size, 0, root) for size in config.patch_sizes}
    table = sweep_frame({size: record.report("clean") for size, record in records.items()})
    paths = write_table(table, root / "sweep_patch")
    logger.info("Patch sweep written to %s", paths["csv"])
    return PatchSweep(records, table, paths)


def robustness_sweep(config: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None) -> RobustnessSweep:
    """
    Kappa per patch size under noise plus PGD, training on undersampled data.

    Each column is the mean over `config.repeats` runs whose seeds derive from
    the master seed. sweep_robust.* holds the attacked kappa row alone; the clean
    kappa of the same runs goes to sweep_robust_clean.* and sweep_robust.json.
    """
    config = replace(config, sampling=SamplingMode.UNDERSAMPLE)
    root = Path(output_dir if output_dir is not None else config.output_dir) / "robust"
    attacked, clean, per_repeat = {}, {}, {}
    for size in config.patch_sizes:
        records = [run_pipeline(config, size, r, root) for r in range(config.repeats)]
        per_repeat[size] = [r.metrics["attacked"]["kappa"] for r in records]
        attacked[size] = float(np.mean(per_repeat[size]))
        clean[size] = float(np.mean([r.metrics["clean"]["kappa"] for r in records]))
    table = kappa_frame({"Kappa": attacked})
    paths = write_table(table, root / "sweep_robust")
    clean_paths = write_table(kappa_frame({"Kappa (clean)": clean}), root / "sweep_robust_clean")
    paths.update({f"clean_{kind}": path for kind, path in clean_paths.items()})
    paths["json"] = _write_json(root / "sweep_robust.json", {
        "attacked": {str(k): v for k, v in attacked.items()},
        "clean": {str(k): v for k, v in clean.items()},
        "per_repeat": {str(k): v for k, v in per_repeat.items()},
        "repeats": config.repeats,
    })
    logger.info("Robustness sweep written to %s", paths["csv"])
    return RobustnessSweep(attacked, clean, per_repeat, table, paths)


# --- maps -----------------------------------------------------------------

def class_palette(num_classes: int, palette_seed: int) -> np.ndarray:
    """(C+1, 3) uint8 colours, row 0 black; evenly spaced hues with a seeded offset"""
    offset = make_rng(palette_seed).random()
    hues = (np.arange(num_classes) / max(num_classes, 1) + offset) % 1.0
    hsv = np.stack([hues, np.full(num_classes, PALETTE_SATURATION), np.full(num_classes, PALETTE_VALUE)], axis=1)
    colours = np.rint(hsv_to_rgb(hsv) * 255).astype(np.uint8)
    return np.vstack([np.zeros((1, 3), dtype=np.uint8), colours])


def render_map(label_map: LabelMap, palette_seed: int, path: Union[str, Path]) -> Path:
    """Indexed-colour PNG, one colour per class and black for unlabeled pixels"""
    if label_map.num_classes > 255:
        raise ValueError(f"An indexed PNG holds at most 255 classes, got {label_map.num_classes}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image = Image.frombytes("P", (label_map.width, label_map.height),
                            np.ascontiguousarray(label_map.labels, dtype=np.uint8).tobytes())
    image.putpalette(class_palette(label_map.num_classes, palette_seed).ravel().tolist())
    try:
        image.save(path, format="PNG")
    except OSError as e:
        raise IwgsError(f"Could not write {path}: {e}") from e
    return path
