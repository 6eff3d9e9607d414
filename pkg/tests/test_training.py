# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

import numpy as np
import pytest
from conftest import make_log

from coreason_slipguard.models import DetectorModel, PredictorModel
from coreason_slipguard.schemas import FilterConfig, TrainConfig
from coreason_slipguard.signal_filter import WindowBatch
from coreason_slipguard.training import (
    Adam,
    confusion_report,
    evaluate,
    fit_on_trials,
    split_trials,
    train,
)


def _toy_batch(rng: np.random.Generator, n: int = 64, context: int = 4, horizon: int = 2) -> WindowBatch:
    """Slip windows carry a tactile offset of +1, the rest -1; future labels follow the action sign."""
    y_now = (np.arange(n) % 2).astype(np.float64)
    y_future = ((np.arange(n) // 2) % 2).astype(np.float64)
    x = rng.normal(scale=0.3, size=(n, context, 48)) + (2.0 * y_now - 1.0)[:, None, None]
    a = rng.normal(scale=0.1, size=(n, horizon, 6)) + (2.0 * y_future - 1.0)[:, None, None]
    return WindowBatch(x=x, a=a, y_now=y_now, y_future=y_future, trial_index=np.zeros(n, dtype=np.int64))


def test_adam_minimizes_quadratic() -> None:
    params = {"x": np.array([5.0, -3.0])}
    opt = Adam(params, lr=0.05, beta1=0.9, beta2=0.999)
    for _ in range(2000):
        opt.step({"x": 2.0 * params["x"]})
    assert np.all(np.abs(params["x"]) < 0.05)
    assert opt.t == 2000


def test_split_is_disjoint_and_deterministic() -> None:
    train_idx, test_idx = split_trials(10, 0.8, seed=4)
    assert len(train_idx) == 8
    assert len(test_idx) == 2
    assert set(train_idx) | set(test_idx) == set(range(10))
    assert not set(train_idx) & set(test_idx)
    again = split_trials(10, 0.8, seed=4)
    np.testing.assert_array_equal(again[0], train_idx)

    small_train, small_test = split_trials(2, 0.99, seed=0)
    assert len(small_train) == 1 and len(small_test) == 1
    with pytest.raises(ValueError, match="at least 2 trials"):
        split_trials(1, 0.8, seed=0)


def test_confusion_report_counts() -> None:
    pred = np.array([True, True, False, False, True])
    labels = np.array([1.0, 0.0, 0.0, 1.0, 1.0])
    report = confusion_report(pred, labels)
    assert (report.tp, report.fp, report.tn, report.fn) == (2, 1, 1, 1)
    assert report.accuracy == pytest.approx(0.6)
    assert report.precision == pytest.approx(2 / 3)
    assert report.recall == pytest.approx(2 / 3)
    assert report.f1 == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        confusion_report(np.array([True]), np.array([1.0, 0.0]))


def test_train_detector_separates_toy_windows() -> None:
    batch = _toy_batch(np.random.default_rng(0))
    config = TrainConfig(hidden=4, epochs=15, batch_size=16, learning_rate=0.05, seed=1)
    model, history = train(batch, config, "detect")
    assert isinstance(model, DetectorModel)
    assert len(history.epochs) == 15
    assert history.pos_weight == pytest.approx(1.0)
    assert history.epochs[-1].loss < history.epochs[0].loss
    assert evaluate(model, batch).accuracy >= 0.9


def test_train_predictor_uses_actions() -> None:
    batch = _toy_batch(np.random.default_rng(1))
    config = TrainConfig(hidden=4, action_hidden=4, fusion_hidden=4, epochs=15, batch_size=16, learning_rate=0.05)
    model, history = train(batch, config, "predict")
    assert isinstance(model, PredictorModel)
    assert model.horizon == 2
    report = evaluate(model, batch)
    assert report.accuracy >= 0.9
    assert report.action_sensitivity is not None


def test_training_is_deterministic() -> None:
    batch = _toy_batch(np.random.default_rng(2), n=32)
    config = TrainConfig(hidden=3, epochs=2, batch_size=8, seed=7)
    first, _ = train(batch, config, "detect")
    second, _ = train(batch, config, "detect")
    for name, value in first.parameters().items():
        np.testing.assert_array_equal(value, second.parameters()[name])


def test_single_class_rejected() -> None:
    batch = _toy_batch(np.random.default_rng(3), n=16)
    batch.y_now = np.zeros(16)
    with pytest.raises(ValueError, match="both classes"):
        train(batch, TrainConfig(hidden=2, epochs=1), "detect")


def test_pos_weight_defaults_to_class_ratio() -> None:
    batch = _toy_batch(np.random.default_rng(4), n=16)
    batch.y_now = np.array([1.0] * 4 + [0.0] * 12)
    _, history = train(batch, TrainConfig(hidden=2, epochs=1), "detect")
    assert history.pos_weight == pytest.approx(3.0)


def test_fit_on_trials_holds_out_whole_trials() -> None:
    logs = [make_log([0] * (8 + i) + [1] * 8, trial_id=f"t{i}") for i in range(5)]
    outcome = fit_on_trials(logs, FilterConfig(context=3, horizon=2), TrainConfig(hidden=2, epochs=1), "detect")
    assert sorted(outcome.train_trials + outcome.test_trials) == list(range(5))
    assert len(outcome.test_trials) == 1
    assert outcome.test_report.n > 0
    assert outcome.history.kind == "detect"
