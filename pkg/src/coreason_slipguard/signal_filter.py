# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

"""
Kalman denoising of the raw tactile channels and assembly of the
(tactile history, future actions) windows the classifiers consume.

Each channel is filtered independently with a random-walk state model.
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, field_validator

from coreason_slipguard.schemas import ACTION_DIM, N_TACTILE_CHANNELS, FilterConfig, TactileFrame, TrialLog

FloatArray = npt.NDArray[np.float64]


class KalmanChannelState(BaseModel):
    model_config = ConfigDict(frozen=True)

    estimate: float
    variance: float = Field(ge=0)
    q_process: float = Field(ge=0)
    r_measure: float = Field(gt=0)


def kalman_update(state: KalmanChannelState, measurement: float) -> KalmanChannelState:
    """Predict (variance += q), then correct toward the measurement."""
    if not math.isfinite(measurement):
        raise ValueError(f"measurement must be finite, got {measurement}")
    prior = state.variance + state.q_process
    gain = prior / (prior + state.r_measure)
    return state.model_copy(
        update={
            "estimate": state.estimate + gain * (measurement - state.estimate),
            "variance": prior * (1.0 - gain),
        }
    )


def riccati_gain(q: float, r: float) -> float:
    """Steady-state Kalman gain of the random-walk model."""
    prior = (q + math.sqrt(q * q + 4.0 * q * r)) / 2.0
    return prior / (prior + r)


class KalmanBank:
    """
    All channels of one stream, updated one frame at a time.

    The first frame initializes the estimates with variance r. The arithmetic
    matches kalman_update element for element.
    """

    def __init__(self, q: float, r: float):
        if q < 0 or r <= 0:
            raise ValueError(f"Need q >= 0 and r > 0, got q={q}, r={r}")
        self.q = q
        self.r = r
        self.estimate: Optional[FloatArray] = None
        self.variance: Optional[FloatArray] = None

    def reset(self) -> None:
        self.estimate = None
        self.variance = None

    def update(self, measurement: FloatArray) -> FloatArray:
        z = np.asarray(measurement, dtype=np.float64)
        if self.estimate is None or self.variance is None:
            self.estimate = z.copy()
            self.variance = np.full(z.shape, self.r)
            return self.estimate.copy()
        prior = self.variance + self.q
        gain = prior / (prior + self.r)
        self.estimate = self.estimate + gain * (z - self.estimate)
        self.variance = prior * (1.0 - gain)
        return self.estimate.copy()


def filter_array(raw: FloatArray, q: float, r: float) -> FloatArray:
    """Filters an (n, channels) array along its first axis."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] == 0:
        raise ValueError(f"Expected a nonempty (n, channels) array, got shape {raw.shape}")
    bank = KalmanBank(q, r)
    return np.stack([bank.update(row) for row in raw])


def filter_stream(frames: Sequence[TactileFrame], q: float = 1e-5, r: float = 1e-2) -> List[TactileFrame]:
    if not frames:
        raise ValueError("filter_stream needs at least one frame")
    filtered = filter_array(np.stack([f.as_array() for f in frames]), q, r)
    return [
        TactileFrame(shear=tuple(row.tolist()), timestamp=frame.timestamp)
        for row, frame in zip(filtered, frames, strict=True)
    ]


class TactileWindow(BaseModel):
    """C consecutive filtered frames ending at tick time t_end."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frames: FloatArray
    t_end: float

    @field_validator("frames")
    @classmethod
    def _check_shape(cls, v: FloatArray) -> FloatArray:
        if v.ndim != 2 or v.shape[1] != N_TACTILE_CHANNELS or v.shape[0] < 1:
            raise ValueError(f"TactileWindow frames must be (C, {N_TACTILE_CHANNELS}), got {v.shape}")
        return v


class ActionWindow(BaseModel):
    """T future actions, one 6-D velocity row per tick."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    actions: FloatArray

    @field_validator("actions")
    @classmethod
    def _check_shape(cls, v: FloatArray) -> FloatArray:
        if v.ndim != 2 or v.shape[1] != ACTION_DIM or v.shape[0] < 1:
            raise ValueError(f"ActionWindow must be (T, {ACTION_DIM}), got {v.shape}")
        return v


class WindowSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    tactile: TactileWindow
    actions: ActionWindow
    label_now: bool
    label_future: bool


class WindowBatch(BaseModel):
    """Stacked windows: x (B, C, 48), a (B, T, 6), labels (B,)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    x: FloatArray
    a: FloatArray
    y_now: FloatArray
    y_future: FloatArray
    trial_index: npt.NDArray[np.int64]

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def subset(self, idx: npt.NDArray[np.int64]) -> "WindowBatch":
        return WindowBatch(
            x=self.x[idx], a=self.a[idx], y_now=self.y_now[idx], y_future=self.y_future[idx],
            trial_index=self.trial_index[idx],
        )


def trial_arrays(trial: TrialLog, q: float, r: float) -> Tuple[FloatArray, FloatArray, FloatArray]:
    """Filtered tactile (L, 48), action6 (L, 6) and slip (L,) arrays of a trial."""
    raw = np.asarray([rec.tactile for rec in trial.records], dtype=np.float64)
    actions = np.asarray([rec.action6 for rec in trial.records], dtype=np.float64)
    slip = np.asarray([rec.slip for rec in trial.records], dtype=np.float64)
    return filter_array(raw, q, r), actions, slip


def history_window(filtered: FloatArray, t_end: int, context: int) -> FloatArray:
    """
    Frames t_end-C+1..t_end. Ticks before the first frame repeat it, so the
    closed loop can score windows from its first ticks on.
    """
    idx = np.clip(np.arange(t_end - context + 1, t_end + 1), 0, None)
    return filtered[idx]


def make_windows(
    trial: TrialLog, context: int, horizon: int, config: Optional[FilterConfig] = None
) -> List[WindowSample]:
    """
    Sliding windows aligned on control ticks. For the window ending at tick t,
    label_now is slip[t], label_future is slip[t+T] and the actions are the
    recorded rows t+1..t+T.
    """
    length = len(trial.records)
    if length < context + horizon:
        return []
    cfg = config or FilterConfig()
    filtered, actions, slip = trial_arrays(trial, cfg.q_process, cfg.r_measure)

    samples = []
    for t in range(context - 1, length - horizon):
        samples.append(
            WindowSample(
                tactile=TactileWindow(frames=filtered[t - context + 1 : t + 1], t_end=trial.records[t].t),
                actions=ActionWindow(actions=actions[t + 1 : t + 1 + horizon]),
                label_now=bool(slip[t]),
                label_future=bool(slip[t + horizon]),
            )
        )
    return samples


def stack_windows(samples: Sequence[WindowSample], trial_index: int = 0) -> WindowBatch:
    if not samples:
        raise ValueError("Cannot stack an empty window list")
    return WindowBatch(
        x=np.stack([s.tactile.frames for s in samples]),
        a=np.stack([s.actions.actions for s in samples]),
        y_now=np.asarray([s.label_now for s in samples], dtype=np.float64),
        y_future=np.asarray([s.label_future for s in samples], dtype=np.float64),
        trial_index=np.full(len(samples), trial_index, dtype=np.int64),
    )


def windows_from_trials(trials: Sequence[TrialLog], config: FilterConfig) -> WindowBatch:
    """Stacks the windows of many trials, remembering which trial each came from."""
    xs, as_, now, future, owner = [], [], [], [], []
    c, h = config.context, config.horizon
    for i, trial in enumerate(trials):
        length = len(trial.records)
        if length < c + h:
            continue
        filtered, actions, slip = trial_arrays(trial, config.q_process, config.r_measure)
        ends = np.arange(c - 1, length - h)
        xs.append(np.stack([filtered[t - c + 1 : t + 1] for t in ends]))
        as_.append(np.stack([actions[t + 1 : t + 1 + h] for t in ends]))
        now.append(slip[ends])
        future.append(slip[ends + h])
        owner.append(np.full(len(ends), i, dtype=np.int64))
    if not xs:
        raise ValueError(f"No trial is long enough for C={c}, T={h}")
    return WindowBatch(
        x=np.concatenate(xs),
        a=np.concatenate(as_),
        y_now=np.concatenate(now),
        y_future=np.concatenate(future),
        trial_index=np.concatenate(owner),
    )
