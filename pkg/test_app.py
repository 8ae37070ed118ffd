#!/usr/bin/env python3
"""
Command-line tests: exit codes, synthetic data generation, a full run and the run index
"""
import json

import numpy as np
import pytest

from app import build_parser, main
from data import load_cube, load_labels
from experiment import Pipeline
from experiment_config import DataConfig, ExperimentConfig, SyntheticSpec
from storage import RUNS_DB, RunStorage


def write_config(path, **sections):
    path.write_text(json.dumps({"schema_version": 1, **sections}))
    return str(path)


@pytest.fixture
def synthetic_files(tmp_path):
    out = tmp_path / "synth"
    code = main(["--out", str(out), "--seed", "3", "gen-synth", "--height", "8", "--width", "8",
                 "--bands", "8", "--classes", "2", "--informative", "2", "--noise-sigma", "0"])
    assert code == 0
    return out / "cube.hdr.json", out / "labels.hdr.json"


def test_gen_synth_writes_loadable_files(synthetic_files):
    cube_header, labels_header = synthetic_files
    cube = load_cube(cube_header)
    labels = load_labels(labels_header)
    assert (cube.height, cube.width, cube.bands) == (8, 8, 8)
    assert labels.num_classes == 2
    assert labels.class_counts() == {1: 32, 2: 32}


def test_gen_synth_writes_the_cube_a_run_builds(tmp_path):
    out = tmp_path / "noisy"
    assert main(["--out", str(out), "--seed", "11", "gen-synth", "--height", "8", "--width", "8",
                 "--bands", "6", "--classes", "2", "--informative", "1", "--noise-sigma", "0.05"]) == 0
    spec = SyntheticSpec(8, 8, 6, 2, (1,), 0.05)
    pipeline = Pipeline(ExperimentConfig(data=DataConfig(synthetic=spec), seed=11, output_dir=str(tmp_path)))
    pipeline.load()
    written = load_cube(out / "cube.hdr.json")
    assert np.array_equal(written.values, pipeline.raw_cube.values.astype(np.float32))


def test_run_from_files_and_list_runs(tmp_path, synthetic_files, capsys):
    cube_header, labels_header = synthetic_files
    config = write_config(tmp_path / "config.json",
                          data={"cube": str(cube_header), "labels": str(labels_header)},
                          split={"per_class": 10},
                          iwgs={"num_bands": 3, "criterion": "signed_min"},
                          patch_sizes=[1])
    out = tmp_path / "runs"
    assert main(["--config", config, "--out", str(out), "run"]) == 0
    run_dir = out / "P1" / "r0"
    assert (run_dir / "map.png").is_file()
    assert (run_dir / "report.md").is_file()
    assert "Artifacts in" in capsys.readouterr().out

    assert main(["--out", str(out), "runs"]) == 0
    assert "1 run(s)" in capsys.readouterr().out

    assert main(["--out", str(out), "runs", "--stats"]) == 0
    stats = capsys.readouterr().out
    assert "1 run(s)" in stats and "P1: 1" in stats

    run_id = RunStorage(out / RUNS_DB).get_runs()[0]["run_id"]
    assert main(["--out", str(out), "runs", "--delete", run_id]) == 0
    assert RunStorage(out / RUNS_DB).get_runs() == []
    assert main(["--out", str(out), "runs", "--delete", run_id]) == 2


def test_pipeline_subcommands_stop_early(tmp_path):
    out = tmp_path / "runs"
    assert main(["--out", str(out), "--seed", "2", "split", "--patch-size", "1"]) == 0
    run_dir = out / "P1" / "r0"
    assert (run_dir / "split.json").is_file()
    assert not (run_dir / "baseline_params.json").exists()


def test_bad_configuration_exits_with_2(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "missing.json"), "run"]) == 2
    assert "❌" in capsys.readouterr().err
    bad = write_config(tmp_path / "bad.json", iwgs={"num_bands": 4, "ns": 4})
    assert main(["--config", bad, "--out", str(tmp_path), "run"]) == 2
    assert main(["--out", str(tmp_path), "eval", "--epsilon", "-1"]) == 2
    assert main(["--out", str(tmp_path), "run", "--patch-size", "4"]) == 2
    assert main(["--out", str(tmp_path), "sweep-patch", "--patch-sizes", "3,x"]) == 2


def test_missing_data_exits_with_3(tmp_path, capsys):
    missing = str(tmp_path / "nothing.hdr.json")
    config = write_config(tmp_path / "config.json", data={"cube": missing, "labels": missing})
    assert main(["--config", config, "--out", str(tmp_path / "runs"), "run"]) == 3
    assert "[load]" in capsys.readouterr().err


def test_render_map_command(tmp_path, synthetic_files):
    _, labels_header = synthetic_files
    png = tmp_path / "gt.png"
    assert main(["render-map", "--labels", str(labels_header), "--png", str(png), "--palette-seed", "4"]) == 0
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


if __name__ == "__main__":
    pytest.main([__file__])
