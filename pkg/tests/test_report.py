# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

import csv
from pathlib import Path

import pytest

from coreason_slipguard.basis import default_profile
from coreason_slipguard.dataset import write_trial
from coreason_slipguard.grasp_sim import run_trial
from coreason_slipguard.report import TRACE_COLUMNS, aggregate_csv, build_report, load_table
from coreason_slipguard.schemas import ObjectParams


def test_build_report_from_trials(tmp_path: Path) -> None:
    trials = tmp_path / "trials"
    logs = [run_trial(default_profile(0.8), ObjectParams(), seed=s, trial_id=f"none-{s}") for s in range(3)]
    for log in logs:
        write_trial(log, trials)

    summary = build_report(trials, tmp_path / "report")
    assert len(summary.rows) == 1
    row = summary.rows[0]
    assert (row.kind, row.n_basis, row.trials) == ("none", 0, 3)
    # Mechanics do not depend on the seed, so every rotation metric is identical.
    assert row.mor_std == pytest.approx(0.0, abs=1e-9)
    assert row.et_mean == 0.0
    assert load_table(summary.table) == summary.rows

    with open(summary.traces, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = list(reader)
    assert header == TRACE_COLUMNS
    assert len(rows) == sum(len(log.records) for log in logs)


def test_report_includes_nested_trial_dirs(tmp_path: Path) -> None:
    trials = tmp_path / "trials"
    write_trial(run_trial(default_profile(0.8), ObjectParams(), seed=0, trial_id="top"), trials)
    write_trial(run_trial(default_profile(0.8), ObjectParams(), seed=1, trial_id="nested"), trials / "sweep")
    summary = build_report(trials, tmp_path / "report")
    assert summary.rows[0].trials == 2


def test_report_without_trials(tmp_path: Path) -> None:
    (tmp_path / "trials").mkdir()
    with pytest.raises(FileNotFoundError, match="No trial files"):
        build_report(tmp_path / "trials", tmp_path / "report")
    with pytest.raises(FileNotFoundError, match="Metrics file not found"):
        aggregate_csv(tmp_path / "missing.csv")
