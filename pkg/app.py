import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from data import load_labels, save_cube, save_labels
from errors import ConfigError, IwgsError
from experiment import Pipeline, patch_sweep, render_map, robustness_sweep, synthetic_scene
from experiment_config import (DEFAULT_LOG_LEVEL, ExperimentConfig, SamplingMode, SyntheticSpec,
                               load_config, with_overrides)
from iwgs import Criterion
from storage import RUNS_DB, RunStorage

# CLI command -> last pipeline stage it runs
PIPELINE_COMMANDS = {
    "split": "split",
    "train": "baseline",
    "select": "select",
    "eval": "evaluate",
    "attack": "attack",
    "run": None,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iwgs", description="Wavelet gradient band selection experiments")
    parser.add_argument("--config", help="Experiment config JSON")
    parser.add_argument("--seed", type=int, help="Master seed (unsigned 64-bit)")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--log-level", default=DEFAULT_LOG_LEVEL, help="Logging level (default from IWGS_LOG_LEVEL)")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("gen-synth", help="Write a synthetic cube and label map")
    synth.add_argument("--height", type=int)
    synth.add_argument("--width", type=int)
    synth.add_argument("--bands", type=int)
    synth.add_argument("--classes", type=int)
    synth.add_argument("--informative", help="Comma separated informative band indices")
    synth.add_argument("--noise-sigma", type=float, dest="synth_noise")

    def overrides(sub):
        sub.add_argument("--patch-size", type=int)
        sub.add_argument("--ns", type=int, help="Number of bands to select")
        sub.add_argument("--criterion", choices=[c.value for c in Criterion])
        sub.add_argument("--epsilon", type=float)
        sub.add_argument("--alpha", type=float)
        sub.add_argument("--steps", type=int)
        sub.add_argument("--noise-sigma", type=float)
        sub.add_argument("--quota", type=int, help="Undersample training pixels to this many per class")

    for name in PIPELINE_COMMANDS:
        sub = commands.add_parser(name, help=f"Run the pipeline through the '{PIPELINE_COMMANDS[name] or 'map'}' stage")
        overrides(sub)
        sub.add_argument("--repeat", type=int, default=0)
    for name in ("sweep-patch", "sweep-robust"):
        sub = commands.add_parser(name)
        overrides(sub)
        sub.add_argument("--patch-sizes", help="Comma separated odd patch sizes, e.g. 1,3,5")
        sub.add_argument("--repeats", type=int)

    render = commands.add_parser("render-map", help="Render a label map header to an indexed PNG")
    render.add_argument("--labels", required=True)
    render.add_argument("--png", required=True)
    render.add_argument("--palette-seed", type=int)

    listing = commands.add_parser("runs", help="List indexed runs")
    listing.add_argument("--limit", type=int, default=20)
    listing.add_argument("--config-hash")
    listing.add_argument("--stats", action="store_true", help="Summarize the index instead of listing runs")
    listing.add_argument("--delete", metavar="RUN_ID", help="Remove one run from the index")
    return parser


def _int_list(text: str, flag: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"{flag} expects comma separated integers, got {text!r}") from e


def resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    config = with_overrides(
        config,
        seed=args.seed,
        output_dir=args.out,
        patch_size=getattr(args, "patch_size", None),
        num_bands=getattr(args, "ns", None),
        criterion=getattr(args, "criterion", None),
        epsilon=getattr(args, "epsilon", None),
        alpha=getattr(args, "alpha", None),
        steps=getattr(args, "steps", None),
        noise_sigma=getattr(args, "noise_sigma", None),
        quota=getattr(args, "quota", None),
    )
    if getattr(args, "quota", None) is not None:
        config = replace(config, sampling=SamplingMode.UNDERSAMPLE)
    if getattr(args, "patch_sizes", None):
        config = replace(config, patch_sizes=tuple(_int_list(args.patch_sizes, "--patch-sizes")))
    if getattr(args, "repeats", None) is not None:
        config = replace(config, repeats=args.repeats)
    return config


def gen_synth(args, config: ExperimentConfig):
    spec = config.data.synthetic or SyntheticSpec()
    changes = {k: v for k, v in (("height", args.height), ("width", args.width), ("bands", args.bands),
                                 ("num_classes", args.classes), ("noise_sigma", args.synth_noise)) if v is not None}
    if args.informative:
        changes["informative_bands"] = tuple(_int_list(args.informative, "--informative"))
    try:
        spec = replace(spec, **changes)
        cube, labels = synthetic_scene(spec, config.seed)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    out = Path(config.output_dir)
    save_cube(cube, out / "cube.hdr.json")
    save_labels(labels, out / "labels.hdr.json")
    print(f"✅ Wrote {spec.height}×{spec.width}×{spec.bands} cube with {spec.num_classes} classes to {out}")


def run_command(args, config: ExperimentConfig):
    until = PIPELINE_COMMANDS[args.command]
    print(f"🚀 Running pipeline through '{until or 'map'}' (P{config.patch_sizes[0]}, repeat {args.repeat})...")
    record = Pipeline(config, config.patch_sizes[0], args.repeat).run(until)
    for name in ("baseline", "clean", "attacked"):
        if name in record.metrics:
            m = record.metrics[name]
            print(f"   {name:9s} OA {100 * m['overall_accuracy']:.2f}  "
                  f"AA {100 * m['average_accuracy']:.2f}  Kappa {100 * m['kappa']:.2f}")
    print(f"✅ Artifacts in {record.output_dir}")


def list_runs(args, config: ExperimentConfig):
    db_path = Path(config.output_dir) / RUNS_DB
    if not db_path.is_file():
        print(f"🔍 No run index at {db_path}")
        return
    storage = RunStorage(db_path)
    if args.delete:
        if not storage.delete_run(args.delete):
            raise ConfigError(f"No run {args.delete!r} in {db_path}")
        print(f"🗑️ Removed {args.delete} from {db_path}")
        return
    if args.stats:
        stats = storage.get_stats()
        print(f"📊 {stats['total']} run(s) in {db_path}")
        if stats["total"]:
            print(f"   mean OA {100 * stats['mean_overall_accuracy']:.2f}  mean Kappa {100 * stats['mean_kappa']:.2f}")
            for size, count in sorted(stats["by_patch_size"].items()):
                print(f"   P{size}: {count}")
        return
    runs = storage.get_runs(args.config_hash, args.limit)
    print(f"🔍 {len(runs)} run(s) in {db_path}")
    for run in runs:
        attacked = "n/a" if run["kappa_attacked"] is None else f"{100 * run['kappa_attacked']:.2f}"
        print(f"   {run['run_id']}  OA {100 * run['overall_accuracy']:.2f}  "
              f"Kappa {100 * run['kappa']:.2f}  attacked {attacked}  {run['output_dir']}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        if args.command == "gen-synth":
            gen_synth(args, config)
        elif args.command in PIPELINE_COMMANDS:
            run_command(args, config)
        elif args.command == "sweep-patch":
            print(f"🚀 Patch sweep over {list(config.patch_sizes)}...")
            sweep = patch_sweep(config)
            print(sweep.table.to_string())
            print(f"✅ Table written to {sweep.paths['csv']}")
        elif args.command == "sweep-robust":
            print(f"🚀 Robustness sweep over {list(config.patch_sizes)} with {config.repeats} repeat(s)...")
            sweep = robustness_sweep(config)
            print(sweep.table.to_string())
            print(f"✅ Table written to {sweep.paths['csv']}")
        elif args.command == "render-map":
            seed = config.seed if args.palette_seed is None else args.palette_seed
            path = render_map(load_labels(args.labels), seed, args.png)
            print(f"✅ Map written to {path}")
        elif args.command == "runs":
            list_runs(args, config)
    except IwgsError as e:
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
