# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from coreason_slipguard.models import DetectorModel, FloatArray, Grads, PredictorModel, SlipModel, Standardizer
from coreason_slipguard.schemas import FilterConfig, ModelKind, TrainConfig, TrialLog
from coreason_slipguard.signal_filter import WindowBatch, windows_from_trials

PREDICT_CHUNK = 4096


class EpochStats(BaseModel):
    epoch: int
    loss: float
    accuracy: float
    f1: float


class TrainHistory(BaseModel):
    kind: ModelKind
    pos_weight: float
    epochs: List[EpochStats] = Field(default_factory=list)


class EvalReport(BaseModel):
    n: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    action_sensitivity: Optional[float] = None


class Adam:
    """Adaptive-moment gradient descent over a dict of parameter arrays, updated in place."""

    def __init__(self, params: Dict[str, FloatArray], lr: float, beta1: float, beta2: float, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: Grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p -= self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


def labels_for(batch: WindowBatch, kind: ModelKind) -> FloatArray:
    return batch.y_now if kind == "detect" else batch.y_future


def split_trials(
    n_trials: int, train_fraction: float, seed: int
) -> Tuple[npt.NDArray[np.int64], npt.NDArray[np.int64]]:
    """
    Random trial-level split; windows of one trial never straddle the split.
    Both sides get at least one trial when n_trials >= 2.
    """
    if n_trials < 2:
        raise ValueError(f"Need at least 2 trials to split, got {n_trials}")
    order = np.random.default_rng(seed).permutation(n_trials)
    n_train = min(max(int(round(n_trials * train_fraction)), 1), n_trials - 1)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def confusion_report(predicted: npt.NDArray[np.bool_], labels: FloatArray) -> EvalReport:
    """Accuracy and slip-class precision/recall/F1 from binary predictions."""
    truth = np.asarray(labels) > 0.5
    pred = np.asarray(predicted, dtype=bool)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError(f"Need equal-length nonempty predictions and labels, got {pred.shape} vs {truth.shape}")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    fn = int(np.sum(~pred & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(
        n=int(pred.size), accuracy=(tp + tn) / pred.size, precision=precision, recall=recall, f1=f1,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def predict_windows(model: SlipModel, x: FloatArray, a: FloatArray) -> FloatArray:
    out = []
    for start in range(0, x.shape[0], PREDICT_CHUNK):
        sl = slice(start, start + PREDICT_CHUNK)
        if isinstance(model, PredictorModel):
            out.append(model.predict_batch(x[sl], a[sl]))
        else:
            out.append(model.predict_batch(x[sl]))
    return np.concatenate(out)


def evaluate(model: SlipModel, batch: WindowBatch, threshold: float = 0.5) -> EvalReport:
    """
    Scores a model against its own label column. Predictors also report the
    mean probability change when every action block is scaled by 1.5.
    """
    if len(batch) == 0:
        raise ValueError("evaluate needs at least one window")
    p = predict_windows(model, batch.x, batch.a)
    report = confusion_report(p > threshold, labels_for(batch, model.kind))
    if isinstance(model, PredictorModel):
        scaled = predict_windows(model, batch.x, 1.5 * batch.a)
        report.action_sensitivity = float(np.mean(scaled - p))
    return report


def _clip_grads(grads: Grads, max_norm: Optional[float]) -> Grads:
    if max_norm is None:
        return grads
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm <= max_norm:
        return grads
    return {k: g * (max_norm / norm) for k, g in grads.items()}


def init_model(kind: ModelKind, config: TrainConfig, horizon: int, rng: np.random.Generator) -> SlipModel:
    if kind == "detect":
        return DetectorModel.init(config.hidden, rng)
    return PredictorModel.init(config.hidden, config.action_hidden, config.fusion_hidden, horizon, rng)


def train(batch: WindowBatch, config: TrainConfig, kind: ModelKind) -> Tuple[SlipModel, TrainHistory]:
    """
    Fits a detector (labels: slip now) or predictor (labels: slip T ticks ahead)
    with class-weighted cross-entropy and Adam. Deterministic given config.seed.
    """
    labels = labels_for(batch, kind)
    n_pos = int(np.sum(labels > 0.5))
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"Training needs both classes; got {n_pos} slip and {n_neg} non-slip windows")

    rng = np.random.default_rng(config.seed)
    model = init_model(kind, config, batch.a.shape[1], rng)
    model.norm = Standardizer.fit(batch.x, batch.a)
    pos_weight = config.pos_weight if config.pos_weight is not None else n_neg / n_pos
    optimizer = Adam(model.parameters(), config.learning_rate, config.beta1, config.beta2)
    history = TrainHistory(kind=kind, pos_weight=pos_weight)

    logger.info("Training model", kind=kind, windows=len(batch), positives=n_pos, pos_weight=round(pos_weight, 3))
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(batch))
        losses = []
        for start in range(0, len(batch), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = model.loss_and_grads(batch.x[idx], labels[idx], pos_weight, batch.a[idx])
            optimizer.step(_clip_grads(grads, config.clip_norm))
            losses.append(loss * len(idx))
        report = _train_report(model, batch)
        stats = EpochStats(epoch=epoch, loss=sum(losses) / len(batch), accuracy=report.accuracy, f1=report.f1)
        history.epochs.append(stats)
        logger.info(
            "Epoch finished", kind=kind, epoch=epoch, loss=round(stats.loss, 5),
            accuracy=round(stats.accuracy, 4), f1=round(stats.f1, 4),
        )
    return model, history


def _train_report(model: SlipModel, batch: WindowBatch) -> EvalReport:
    p = predict_windows(model, batch.x, batch.a)
    return confusion_report(p > 0.5, labels_for(batch, model.kind))


def grad_check(
    model: SlipModel,
    x: FloatArray,
    labels: FloatArray,
    a: Optional[FloatArray] = None,
    pos_weight: float = 1.0,
    h: float = 1e-5,
) -> float:
    """
    Max relative error between the analytic loss gradient and central finite
    differences over every parameter entry. Meant for small models (H <= 8).
    """
    _, analytic = model.loss_and_grads(x, labels, pos_weight, a)
    worst = 0.0
    for name, param in model.parameters().items():
        flat = param.reshape(-1)
        grad = analytic[name].reshape(-1)
        for j in range(flat.size):
            saved = flat[j]
            flat[j] = saved + h
            plus, _ = model.loss_and_grads(x, labels, pos_weight, a)
            flat[j] = saved - h
            minus, _ = model.loss_and_grads(x, labels, pos_weight, a)
            flat[j] = saved
            numeric = (plus - minus) / (2.0 * h)
            err = abs(grad[j] - numeric) / max(abs(grad[j]), abs(numeric), 1e-5)
            worst = max(worst, err)
    return worst


class TrainOutcome(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: SlipModel
    history: TrainHistory
    test_report: EvalReport
    train_trials: List[int]
    test_trials: List[int]


def fit_on_trials(
    trials: Sequence[TrialLog], filter_config: FilterConfig, config: TrainConfig, kind: ModelKind
) -> TrainOutcome:
    """Trial-level split, window extraction, training and held-out evaluation."""
    train_idx, test_idx = split_trials(len(trials), config.train_fraction, config.seed)
    batch = windows_from_trials(trials, filter_config)
    train_mask = np.isin(batch.trial_index, train_idx)
    train_batch = batch.subset(np.flatnonzero(train_mask))
    test_batch = batch.subset(np.flatnonzero(~train_mask))

    model, history = train(train_batch, config, kind)
    report = evaluate(model, test_batch)
    logger.info("Held-out evaluation", kind=kind, accuracy=round(report.accuracy, 4), f1=round(report.f1, 4))
    return TrainOutcome(
        model=model, history=history, test_report=report,
        train_trials=[int(i) for i in train_idx], test_trials=[int(i) for i in test_idx],
    )
