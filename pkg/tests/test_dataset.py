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

from coreason_slipguard.basis import default_profile
from coreason_slipguard.dataset import DatasetBuilder, DatasetLoader, gen_dataset, header_path, read_trial, write_trial
from coreason_slipguard.grasp_sim import run_trial
from coreason_slipguard.schemas import DatasetConfig, ObjectParams


def test_trial_file_roundtrip(tmp_path: Path) -> None:
    log = run_trial(default_profile(0.8), ObjectParams(), seed=21, trial_id="roundtrip")
    path = write_trial(log, tmp_path)
    assert path.name == "roundtrip.jsonl"
    assert header_path(path).name == "roundtrip.header.json"
    assert len(path.read_text().splitlines()) == len(log.records)
    assert read_trial(path) == log


def test_read_trial_errors(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError, match="Trial file not found"):
        read_trial(tmp_path / "absent.jsonl")

    log = run_trial(default_profile(0.8), ObjectParams(), seed=1, trial_id="broken")
    path = write_trial(log, tmp_path)
    path.write_text("{oops\n")
    with pytest.raises(ValueError, match="Invalid JSON"):
        read_trial(path)


def test_plan_cycles_speeds_and_draws_objects(tmp_path: Path) -> None:
    config = DatasetConfig(n_trials=5, v_max_grid=[0.3, 0.6], seed=2)
    plans = DatasetBuilder(tmp_path, config).plan_trials()
    assert [p.v_max for p in plans] == [0.3, 0.6, 0.3, 0.6, 0.3]
    assert len({p.seed for p in plans}) == 5
    for plan in plans:
        assert 0.3 <= plan.params.mass <= 0.5
        assert 0.6 <= plan.params.friction_coeff <= 1.0
    assert plans == DatasetBuilder(tmp_path, config).plan_trials()


def test_manifest_and_loader(tiny_dataset: Path) -> None:
    loader = DatasetLoader(tiny_dataset)
    manifest = loader.load_manifest()
    assert manifest.n_trials == 3
    assert len(manifest.checksums) == 6
    assert loader.verify_integrity()

    trials = loader.load_trials()
    assert [t.meta.trial_id for t in trials] == ["trial-0000", "trial-0001", "trial-0002"]
    slip, total = loader.class_balance()
    assert total == sum(len(t.records) for t in trials)
    assert slip == sum(r.slip for t in trials for r in t.records)
    assert manifest.slip_fraction == pytest.approx(slip / total)


def test_generation_is_deterministic(tmp_path: Path) -> None:
    config = DatasetConfig(n_trials=2, v_max_grid=[0.7], seed=5)
    first = gen_dataset(config, tmp_path / "a")
    second = gen_dataset(config, tmp_path / "b")
    assert first.checksums == second.checksums


def test_workers_match_serial(tmp_path: Path) -> None:
    serial = gen_dataset(DatasetConfig(n_trials=2, v_max_grid=[0.8], seed=6), tmp_path / "serial")
    parallel = gen_dataset(DatasetConfig(n_trials=2, v_max_grid=[0.8], seed=6, workers=2), tmp_path / "parallel")
    assert serial.checksums == parallel.checksums


def test_rebuild_replaces_old_files(tmp_path: Path) -> None:
    out = tmp_path / "ds"
    out.mkdir()
    (out / "stale.jsonl").write_text("old")
    gen_dataset(DatasetConfig(n_trials=1, v_max_grid=[0.8]), out)
    assert not (out / "stale.jsonl").exists()


def test_failed_build_leaves_nothing(tmp_path: Path) -> None:
    out = tmp_path / "ds"
    with patch("coreason_slipguard.dataset.write_trial", side_effect=OSError("disk full")):
        with pytest.raises(RuntimeError, match="Dataset build failed"):
            gen_dataset(DatasetConfig(n_trials=1, v_max_grid=[0.8]), out)
    assert not out.exists()


def test_loader_missing_dataset(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError, match="Dataset not found"):
        DatasetLoader(tmp_path / "nowhere")
    with pytest.raises(FileNotFoundError, match="Manifest not found"):
        DatasetLoader(tmp_path).load_manifest()


def test_loader_bad_manifest(tmp_path: Path) -> None:
    (tmp_path / "manifest.json").write_text("{bad")
    with pytest.raises(ValueError, match="Invalid JSON"):
        DatasetLoader(tmp_path).load_manifest()
    (tmp_path / "manifest.json").write_text("{}")
    with pytest.raises(ValueError, match="Failed to parse manifest"):
        DatasetLoader(tmp_path).load_manifest()


def test_tampered_trial_detected(tiny_dataset: Path) -> None:
    target = tiny_dataset / "trial-0001.jsonl"
    target.write_text(target.read_text().replace('"slip": 0', '"slip": 1', 1))
    with pytest.raises(ValueError, match="Integrity check failed"):
        DatasetLoader(tiny_dataset).load_trials()


def test_missing_trial_detected(tiny_dataset: Path) -> None:
    (tiny_dataset / "trial-0002.header.json").unlink()
    with pytest.raises(FileNotFoundError, match="trial-0002.header.json"):
        DatasetLoader(tiny_dataset).verify_integrity()


def test_symlinked_trial_rejected(tiny_dataset: Path) -> None:
    target = tiny_dataset / "trial-0000.jsonl"
    copy = tiny_dataset / "copy.bin"
    copy.write_bytes(target.read_bytes())
    target.unlink()
    target.symlink_to(copy)
    with pytest.raises(ValueError, match="Symlinks not allowed"):
        DatasetLoader(tiny_dataset).verify_integrity()


def test_path_traversal_rejected(tiny_dataset: Path) -> None:
    manifest_path = tiny_dataset / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["checksums"]["../escape.jsonl"] = "0" * 64
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(ValueError, match="Path traversal"):
        DatasetLoader(tiny_dataset).verify_integrity()
