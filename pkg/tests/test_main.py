# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

import json
from pathlib import Path
from unittest.mock import patch

import pytest
from typer.testing import CliRunner

from coreason_slipguard import __version__
from coreason_slipguard.dataset import DatasetLoader
from coreason_slipguard.main import app
from coreason_slipguard.pipeline import OUT_DIR_ENV, SlipPipeline

runner = CliRunner()


def test_version() -> None:
    result = runner.invoke(app, ["version"])
    assert result.exit_code == 0
    assert f"v{__version__}" in result.stdout


def test_train_passes_kind(tmp_path: Path) -> None:
    with patch.object(SlipPipeline, "train") as mock_train:
        result = runner.invoke(app, ["--out", str(tmp_path), "train", "--kind", "predict"])
    assert result.exit_code == 0
    mock_train.assert_called_once_with("predict")


def test_run_defaults(tmp_path: Path) -> None:
    with patch.object(SlipPipeline, "run") as mock_run:
        result = runner.invoke(app, ["--out", str(tmp_path), "run"])
    assert result.exit_code == 0
    mock_run.assert_called_once_with("psc", 0, None, "default", None, None, False)


def test_run_options(tmp_path: Path) -> None:
    with patch.object(SlipPipeline, "run") as mock_run:
        result = runner.invoke(
            app,
            [
                "--out", str(tmp_path), "run", "--controller", "rsc", "-N", "4", "--trial-seed", "9",
                "--v-max", "0.7", "--preset", "heavy_box", "--trace",
            ],
        )
    assert result.exit_code == 0
    mock_run.assert_called_once_with("rsc", 9, 4, "default", 0.7, "heavy_box", True)


def test_generalize_collects_presets(tmp_path: Path) -> None:
    with patch.object(SlipPipeline, "generalize", return_value=[]) as mock_gen:
        result = runner.invoke(
            app, ["--out", str(tmp_path), "generalize", "--preset", "heavy_box", "--preset", "slick_box", "-n", "2"]
        )
    assert result.exit_code == 0
    mock_gen.assert_called_once_with("psc", None, 2, ["heavy_box", "slick_box"])


def test_sweep_overrides(tmp_path: Path) -> None:
    with patch.object(SlipPipeline, "sweep", autospec=True, return_value=[]) as mock_sweep:
        result = runner.invoke(app, ["--out", str(tmp_path), "sweep", "--trials", "3", "--workers", "2"])
    assert result.exit_code == 0
    pipeline = mock_sweep.call_args[0][0]
    assert (pipeline.config.sweep.trials, pipeline.config.sweep.workers) == (3, 2)


def test_seed_and_run_dir(tmp_path: Path) -> None:
    with patch.object(SlipPipeline, "gen_data", autospec=True) as mock_gen:
        result = runner.invoke(app, ["--seed", "7", "--out", str(tmp_path), "--run-id", "r1", "gen-data"])
    assert result.exit_code == 0
    pipeline = mock_gen.call_args[0][0]
    assert pipeline.config.dataset.seed == pipeline.config.sweep.seed == 7
    assert pipeline.paths.root == tmp_path / "r1"
    assert (tmp_path / "r1" / "slipguard.log").exists()


def test_out_root_from_env(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path))
    with patch.object(SlipPipeline, "report", autospec=True) as mock_report:
        result = runner.invoke(app, ["report"])
    assert result.exit_code == 0
    assert mock_report.call_args[0][0].paths.root == tmp_path / "default"


@pytest.mark.parametrize(
    "command, method",
    [
        (["train", "--kind", "detect"], "train"),
        (["eval", "--kind", "detect"], "evaluate"),
        (["run"], "run"),
        (["sweep"], "sweep"),
        (["generalize"], "generalize"),
        (["report"], "report"),
        (["gen-data"], "gen_data"),
    ],
)
def test_command_failure_exits_nonzero(tmp_path: Path, command: list[str], method: str) -> None:
    with patch.object(SlipPipeline, method, side_effect=RuntimeError("boom")):
        result = runner.invoke(app, ["--out", str(tmp_path), *command])
    assert result.exit_code == 1


def test_missing_model_exits_nonzero(tmp_path: Path) -> None:
    result = runner.invoke(app, ["--out", str(tmp_path), "eval", "--kind", "detect"])
    assert result.exit_code == 1


def test_bad_config_exits_nonzero(tmp_path: Path) -> None:
    result = runner.invoke(app, ["--config", str(tmp_path / "absent.json"), "version"])
    assert result.exit_code == 1

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"controller": {"lb": 1.0, "ub": 0.0}}))
    result = runner.invoke(app, ["--config", str(bad), "report"])
    assert result.exit_code == 1


def test_gen_data_writes_dataset(tmp_path: Path) -> None:
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"dataset": {"n_trials": 5, "v_max_grid": [0.4, 0.7], "seed": 2}}))
    result = runner.invoke(app, ["--config", str(config), "--out", str(tmp_path), "gen-data", "--trials", "2"])
    assert result.exit_code == 0
    assert '"n_trials": 2' in result.stdout

    loader = DatasetLoader(tmp_path / "default" / "dataset")
    assert loader.verify_integrity()
    assert len(loader.trial_paths()) == 2
