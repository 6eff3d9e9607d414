# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

import math

import numpy as np
import pytest
from conftest import make_log

from coreason_slipguard.schemas import FilterConfig, TactileFrame
from coreason_slipguard.signal_filter import (
    KalmanBank,
    KalmanChannelState,
    filter_array,
    filter_stream,
    history_window,
    kalman_update,
    make_windows,
    riccati_gain,
    stack_windows,
    windows_from_trials,
)


def test_first_output_is_measurement() -> None:
    bank = KalmanBank(1e-5, 1e-2)
    z = np.linspace(-1.0, 1.0, 48)
    np.testing.assert_array_equal(bank.update(z), z)
    assert bank.variance is not None
    np.testing.assert_array_equal(bank.variance, np.full(48, 1e-2))


def test_bank_matches_scalar_update() -> None:
    rng = np.random.default_rng(0)
    z = rng.normal(size=(20, 3))
    bank = KalmanBank(1e-4, 1e-2)
    batch = [bank.update(row) for row in z]

    for ch in range(3):
        state = KalmanChannelState(estimate=z[0, ch], variance=1e-2, q_process=1e-4, r_measure=1e-2)
        for k in range(1, 20):
            state = kalman_update(state, z[k, ch])
            assert batch[k][ch] == pytest.approx(state.estimate, rel=1e-12, abs=1e-15)


def test_gain_reaches_riccati_steady_state() -> None:
    q, r = 1e-5, 1e-2
    bank = KalmanBank(q, r)
    for _ in range(2000):
        bank.update(np.zeros(1))
    assert bank.variance is not None
    prior = float(bank.variance[0]) + q
    assert prior / (prior + r) == pytest.approx(riccati_gain(q, r), rel=1e-6)
    assert riccati_gain(q, r) == pytest.approx(math.sqrt(q / r), rel=0.05)


def test_filter_reduces_noise() -> None:
    rng = np.random.default_rng(1)
    raw = 0.3 + 0.05 * rng.standard_normal((600, 4))
    filtered = filter_array(raw, 1e-5, 1e-2)
    assert filtered[100:].std(axis=0).max() < 0.5 * raw[100:].std(axis=0).min()


def test_zero_process_noise_is_running_mean() -> None:
    z = np.array([[1.0], [3.0], [5.0], [7.0]])
    out = filter_array(z, 0.0, 1.0)
    np.testing.assert_allclose(out[:, 0], [1.0, 2.0, 3.0, 4.0])


def test_update_rejects_non_finite() -> None:
    state = KalmanChannelState(estimate=0.0, variance=1.0, q_process=0.0, r_measure=1.0)
    with pytest.raises(ValueError, match="finite"):
        kalman_update(state, float("inf"))
    with pytest.raises(ValueError):
        KalmanBank(1e-5, 0.0)
    with pytest.raises(ValueError):
        filter_array(np.zeros((0, 48)), 1e-5, 1e-2)


def test_filter_stream_keeps_timestamps() -> None:
    frames = [TactileFrame(shear=tuple([float(k)] * 48), timestamp=k / 30.0) for k in range(5)]
    out = filter_stream(frames)
    assert [f.timestamp for f in out] == [f.timestamp for f in frames]
    assert out[0] == frames[0]
    with pytest.raises(ValueError):
        filter_stream([])


def test_window_count_and_alignment() -> None:
    slip = [0] * 12 + [1] * 8
    log = make_log(slip)
    context, horizon = 4, 3
    samples = make_windows(log, context, horizon)
    assert len(samples) == len(slip) - context - horizon + 1

    first = samples[0]
    assert first.tactile.frames.shape == (context, 48)
    assert first.tactile.t_end == pytest.approx(log.records[context - 1].t)
    np.testing.assert_array_equal(first.actions.actions[:, 0], [4.0, 5.0, 6.0])
    for i, sample in enumerate(samples):
        t = context - 1 + i
        assert sample.label_now == bool(slip[t])
        assert sample.label_future == bool(slip[t + horizon])


def test_short_trial_has_no_windows() -> None:
    assert make_windows(make_log([0] * 6), 4, 3) == []


def test_batch_matches_per_trial_windows() -> None:
    logs = [make_log([0] * 10 + [1] * 5), make_log([0] * 3), make_log([1] * 4 + [0] * 12)]
    config = FilterConfig(context=4, horizon=3)
    batch = windows_from_trials(logs, config)
    expected = [stack_windows(make_windows(log, 4, 3, config), i) for i, log in enumerate(logs) if i != 1]

    np.testing.assert_allclose(batch.x, np.concatenate([b.x for b in expected]))
    np.testing.assert_array_equal(batch.a, np.concatenate([b.a for b in expected]))
    np.testing.assert_array_equal(batch.y_future, np.concatenate([b.y_future for b in expected]))
    assert set(batch.trial_index.tolist()) == {0, 2}
    assert len(batch) == 9 + 10

    sub = batch.subset(np.flatnonzero(batch.trial_index == 2))
    assert len(sub) == 10


def test_windows_from_too_short_trials() -> None:
    with pytest.raises(ValueError, match="long enough"):
        windows_from_trials([make_log([0] * 3)], FilterConfig(context=4, horizon=3))


def test_history_window_pads_with_first_frame() -> None:
    filtered = np.arange(5, dtype=np.float64)[:, None] * np.ones((1, 48))
    window = history_window(filtered, 1, 4)
    np.testing.assert_array_equal(window[:, 0], [0.0, 0.0, 0.0, 1.0])
    np.testing.assert_array_equal(history_window(filtered, 4, 2)[:, 0], [3.0, 4.0])


def test_filter_is_causal() -> None:
    rng = np.random.default_rng(4)
    raw = rng.normal(size=(30, 48))
    k = 12
    altered = raw.copy()
    altered[k + 1 :] = rng.normal(loc=5.0, size=(30 - k - 1, 48))
    np.testing.assert_array_equal(filter_array(altered, 1e-4, 1e-2)[: k + 1], filter_array(raw, 1e-4, 1e-2)[: k + 1])
    assert not np.array_equal(filter_array(altered, 1e-4, 1e-2)[k + 1], filter_array(raw, 1e-4, 1e-2)[k + 1])
