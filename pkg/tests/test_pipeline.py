# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

import json
from pathlib import Path

import pytest

from coreason_slipguard.metrics import read_rows_csv
from coreason_slipguard.models import DetectorModel, PredictorModel, load_model
from coreason_slipguard.pipeline import OUT_DIR_ENV, SlipPipeline, default_out_root, load_config, run_sweep
from coreason_slipguard.schemas import ExperimentConfig, GeneralizationRow, MetricsRow, TrialMetrics


def test_default_out_root(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.delenv(OUT_DIR_ENV, raising=False)
    assert default_out_root() == Path("out")
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path))
    assert default_out_root() == tmp_path


def test_load_config(tmp_path: Path) -> None:
    assert load_config(None) == ExperimentConfig()

    path = tmp_path / "config.json"
    path.write_text(json.dumps({"sweep": {"trials": 3}, "profiles": {"fast": {"v_max": 0.7}}}))
    config = load_config(path)
    assert config.sweep.trials == 3
    assert config.profile("fast").v_max == 0.7

    with pytest.raises(FileNotFoundError, match="Config file not found"):
        load_config(tmp_path / "absent.json")
    path.write_text("{")
    with pytest.raises(ValueError, match="Invalid JSON"):
        load_config(path)
    path.write_text(json.dumps({"controller": {"n_basis": 12}}))
    with pytest.raises(ValueError, match="Invalid config"):
        load_config(path)


def test_with_seed_replaces_every_seed() -> None:
    config = ExperimentConfig().with_seed(42)
    assert config.dataset.seed == config.train.seed == config.sweep.seed == 42


def test_missing_models_name_the_path(tmp_path: Path, tiny_config: ExperimentConfig) -> None:
    pipeline = SlipPipeline(tiny_config, tmp_path / "run")
    with pytest.raises(FileNotFoundError, match="predict.json"):
        pipeline.load_models("psc")
    with pytest.raises(FileNotFoundError, match="detect.json"):
        pipeline.load_models("rsc")
    with pytest.raises(FileNotFoundError, match="Model file not found"):
        pipeline.sweep()
    assert pipeline.load_models("none").detector is None


def test_uncontrolled_run(tmp_path: Path, tiny_config: ExperimentConfig) -> None:
    pipeline = SlipPipeline(tiny_config, tmp_path / "run")
    log = pipeline.run("none", seed=5, v_max=0.6)
    assert log.meta.trial_id == "none-seed5"
    assert log.meta.v_max == 0.6
    assert (tmp_path / "run" / "trials" / "none-seed5.jsonl").exists()

    with pytest.raises(ValueError, match="Unknown profile"):
        pipeline.run("none", seed=0, profile_name="warp")
    with pytest.raises(ValueError, match="Unknown object preset"):
        pipeline.run("none", seed=0, preset="anvil")


def test_end_to_end(tmp_path: Path, tiny_config: ExperimentConfig) -> None:
    run_dir = tmp_path / "run"
    pipeline = SlipPipeline(tiny_config, run_dir)

    manifest = pipeline.gen_data()
    assert manifest.n_trials == 6
    assert 0 < manifest.n_slip_ticks < manifest.n_ticks

    detect = pipeline.train("detect")
    predict = pipeline.train("predict")
    assert isinstance(load_model(run_dir / "models" / "detect.json"), DetectorModel)
    predictor = load_model(run_dir / "models" / "predict.json")
    assert isinstance(predictor, PredictorModel)
    assert predictor.horizon == 4
    assert (run_dir / "models" / "predict.history.json").exists()
    assert len(detect.history.epochs) == len(predict.history.epochs) == 2
    rescored = pipeline.evaluate("detect")
    held_out = detect.test_report
    assert (rescored.tp, rescored.fp, rescored.tn, rescored.fn) == (held_out.tp, held_out.fp, held_out.tn, held_out.fn)

    log = pipeline.run("rsc", seed=1, trace=True)
    assert log.meta.controller == "rsc"
    assert log.meta.n_basis == 3
    assert (run_dir / "report" / "rsc-N3-seed1.trace.csv").exists()

    rows = pipeline.sweep()
    assert [(r.kind, r.n_basis) for r in rows] == [("psc", 2), ("psc", 3), ("rsc", 2), ("rsc", 3)]
    assert read_rows_csv(run_dir / "report" / "sweep.csv", MetricsRow) == rows
    per_trial = read_rows_csv(run_dir / "report" / "sweep_trials.csv", TrialMetrics)
    assert len(per_trial) == 4
    assert len({m.seed for m in per_trial}) == 4

    general = pipeline.generalize("psc", trials=1, presets=["heavy_box", "slick_box"])
    assert [g.object for g in general] == ["heavy_box", "slick_box"]
    assert read_rows_csv(run_dir / "report" / "generalize_psc.csv", GeneralizationRow) == general

    # The single rsc run lands in the N=3 cell next to its sweep trial.
    summary = pipeline.report()
    assert {(r.kind, r.n_basis, r.trials) for r in summary.rows} == {
        ("psc", 2, 1),
        ("psc", 3, 1),
        ("rsc", 2, 1),
        ("rsc", 3, 2),
    }

    # Controller timing differs between runs; the mechanics do not.
    again = run_sweep(tiny_config, run_dir)
    assert [(r.kind, r.n_basis, r.mor_mean, r.drt_mean) for r in again] == [
        (r.kind, r.n_basis, r.mor_mean, r.drt_mean) for r in rows
    ]
