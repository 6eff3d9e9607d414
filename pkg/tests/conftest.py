# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

import math
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
import pytest

from coreason_slipguard.basis import path_direction
from coreason_slipguard.dataset import gen_dataset
from coreason_slipguard.schemas import (
    ControllerConfig,
    DatasetConfig,
    DatasetManifest,
    ExperimentConfig,
    FilterConfig,
    ObjectParams,
    ProfileSpec,
    SolverSettings,
    SweepConfig,
    TickRecord,
    TrainConfig,
    TrialLog,
    TrialMeta,
)

# --- Mocks ---


class StubDetector:
    """Detector that reports the same slip probability for every window."""

    def __init__(self, p: float = 0.1):
        self.p = p
        self.calls = 0

    def predict_proba(self, window: np.ndarray) -> float:
        self.calls += 1
        return self.p


class FailingDetector:
    def predict_proba(self, window: np.ndarray) -> float:
        raise RuntimeError("detector offline")


class StubPredictor:
    """
    Action-conditioned predictor: the slip probability rises with the mean
    planned speed along the path, p = sigmoid(gain * (mean_speed - onset)).
    """

    def __init__(self, horizon: int = 10, onset: float = 0.3, gain: float = 40.0):
        self.horizon = horizon
        self.onset = onset
        self.gain = gain

    def _score(self, actions: np.ndarray) -> float:
        speeds = np.asarray(actions)[:, :2] @ path_direction()[:2]
        return 0.5 * (1.0 + math.tanh(0.5 * self.gain * (float(np.mean(speeds)) - self.onset)))

    def predict_proba(self, window: np.ndarray, actions: np.ndarray) -> float:
        return self._score(actions)

    def condition(self, window: np.ndarray) -> Callable[[np.ndarray], float]:
        return self._score


# --- Builders ---


def make_log(
    slip: Sequence[int],
    theta: Optional[Sequence[float]] = None,
    cmd: Optional[Sequence[float]] = None,
    controller: str = "none",
    n_basis: Optional[int] = None,
    trial_id: str = "synthetic",
) -> TrialLog:
    """Trial whose tactile frame k is filled with k and whose action row k starts with k."""
    n = len(slip)
    theta = theta if theta is not None else [7.0 if s else 0.0 for s in slip]
    cmd = cmd if cmd is not None else [0.0] * n
    records: List[TickRecord] = [
        TickRecord(
            t=(k + 1) / 30.0,
            cmd=cmd[k],
            speed=cmd[k],
            accel=0.0,
            tactile=[float(k)] * 48,
            theta=theta[k],
            slip=slip[k],
            action6=[float(k), 0.0, 0.0, 0.0, 0.0, 0.0],
        )
        for k in range(n)
    ]
    profile = ProfileSpec(v_max=0.5).build()
    meta = TrialMeta(
        trial_id=trial_id,
        seed=0,
        controller=controller,  # type: ignore[arg-type]
        n_basis=n_basis,
        v_max=0.5,
        object=ObjectParams(),
        profile=profile.to_json_dict(),
    )
    return TrialLog(meta=meta, records=records)


# --- Fixtures ---


@pytest.fixture
def stub_detector() -> StubDetector:
    return StubDetector()


@pytest.fixture
def stub_predictor() -> StubPredictor:
    return StubPredictor()


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    """Experiment small enough to run end to end in seconds."""
    return ExperimentConfig(
        filter=FilterConfig(context=4, horizon=4),
        dataset=DatasetConfig(n_trials=6, v_max_grid=[0.5, 0.8], seed=3),
        train=TrainConfig(epochs=2, hidden=4, action_hidden=4, fusion_hidden=4, batch_size=32, seed=3),
        controller=ControllerConfig(
            kind="psc",
            n_basis=3,
            horizon=4,
            tick_budget_ms=None,
            solver=SolverSettings(max_outer=5, max_inner=20),
        ),
        sweep=SweepConfig(basis_range=(2, 3), trials=1, v_max=0.8, seed=3),
        profiles={"default": ProfileSpec(v_max=0.8)},
    )


@pytest.fixture
def tiny_dataset(tmp_path: Path) -> Path:
    out = tmp_path / "dataset"
    manifest: DatasetManifest = gen_dataset(DatasetConfig(n_trials=3, v_max_grid=[0.6, 0.8], seed=11), out)
    assert manifest.n_trials == 3
    return out
