# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

"""
From-scratch recurrent slip classifiers.

A single-layer LSTM encodes a window of filtered tactile frames. The detector
reads slip straight off the last hidden state; the predictor fuses that
encoding with an embedding of the planned actions. Gradients are exact
backpropagation through time. Models serialize to named-tensor JSON.

Gate blocks are stacked in the order (i, f, o, g).
"""

import json
import os
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ValidationError

from coreason_slipguard.schemas import ACTION_DIM, N_TACTILE_CHANNELS, ModelKind

FloatArray = npt.NDArray[np.float64]
Grads = Dict[str, FloatArray]

MODEL_FORMAT_VERSION = 1
LOGIT_CLIP = 30.0
GATES = ("i", "f", "o", "g")


class ModelFormatError(ValueError):
    """A model file is unreadable, truncated or has the wrong tensors."""


class ModelVersionError(ModelFormatError):
    """A model file was written by an incompatible format version."""


def sigmoid(z: FloatArray) -> FloatArray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_finite(name: str, arr: FloatArray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"Tensor {name} contains non-finite values")


class LstmParams:
    """
    Weights of one LSTM layer, gates stacked as rows: W (4H, D), U (4H, H), b (4H,).
    """

    def __init__(self, W: FloatArray, U: FloatArray, b: FloatArray):
        hidden = U.shape[1] if U.ndim == 2 else -1
        if W.ndim != 2 or U.shape != (4 * hidden, hidden) or W.shape[0] != 4 * hidden or b.shape != (4 * hidden,):
            raise ValueError(f"Inconsistent LSTM shapes: W {W.shape}, U {U.shape}, b {b.shape}")
        for name, arr in (("W", W), ("U", U), ("b", b)):
            _check_finite(name, arr)
        self.W = W
        self.U = U
        self.b = b

    @property
    def hidden_dim(self) -> int:
        return int(self.U.shape[1])

    @property
    def input_dim(self) -> int:
        return int(self.W.shape[1])

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParams":
        return cls(
            np.zeros((4 * hidden_dim, input_dim)), np.zeros((4 * hidden_dim, hidden_dim)), np.zeros(4 * hidden_dim)
        )

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "LstmParams":
        k = 1.0 / np.sqrt(hidden_dim)
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim : 2 * hidden_dim] = 1.0  # forget gate starts open
        return cls(
            rng.uniform(-k, k, (4 * hidden_dim, input_dim)),
            rng.uniform(-k, k, (4 * hidden_dim, hidden_dim)),
            b,
        )

    def gate(self, name: str) -> Tuple[FloatArray, FloatArray, FloatArray]:
        """(W_name, U_name, b_name) views of one gate."""
        j = GATES.index(name)
        h = self.hidden_dim
        rows = slice(j * h, (j + 1) * h)
        return self.W[rows], self.U[rows], self.b[rows]


class LstmCache:
    """Activations of every step, enough for exact BPTT."""

    def __init__(self, squeeze: bool):
        self.squeeze = squeeze
        self.steps: List[Tuple[FloatArray, ...]] = []


def lstm_forward(params: LstmParams, sequence: FloatArray) -> Tuple[FloatArray, LstmCache]:
    """
    Runs the cell over a (C, D) sequence or a (B, C, D) batch from h = c = 0.

    Returns the final hidden state, (H,) or (B, H).
    """
    seq = np.asarray(sequence, dtype=np.float64)
    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq[None]
    if seq.ndim != 3 or seq.shape[2] != params.input_dim:
        raise ValueError(f"Sequence shape {np.shape(sequence)} does not match LSTM input_dim {params.input_dim}")

    batch = seq.shape[0]
    H = params.hidden_dim
    h = np.zeros((batch, H))
    c = np.zeros((batch, H))
    cache = LstmCache(squeeze)

    for t in range(seq.shape[1]):
        x = seq[:, t]
        z = x @ params.W.T + h @ params.U.T + params.b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H : 2 * H])
        o = sigmoid(z[:, 2 * H : 3 * H])
        g = np.tanh(z[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.steps.append((x, h, c, i, f, o, g, tc))
        h, c = h_new, c_new

    return (h[0] if squeeze else h), cache


def lstm_backward(
    params: LstmParams, cache: LstmCache, dh_final: FloatArray
) -> Tuple[FloatArray, FloatArray, FloatArray]:
    """Gradients (dW, dU, db) given dLoss/dh at the last step."""
    dh = np.asarray(dh_final, dtype=np.float64)
    if cache.squeeze:
        dh = dh[None]
    dW = np.zeros_like(params.W)
    dU = np.zeros_like(params.U)
    db = np.zeros_like(params.b)
    dc = np.zeros_like(dh)

    for x, h_prev, c_prev, i, f, o, g, tc in reversed(cache.steps):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                do * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ],
            axis=1,
        )
        dW += dz.T @ x
        dU += dz.T @ h_prev
        db += dz.sum(axis=0)
        dh = dz @ params.U
        dc = dc * f

    return dW, dU, db


def weighted_bce(logits: FloatArray, labels: FloatArray, pos_weight: float = 1.0) -> Tuple[float, FloatArray]:
    """
    Class-weighted binary cross-entropy on clipped logits, averaged over the batch.

    Returns the loss and dLoss/dlogits; the gradient is zero where the clip is active.
    """
    z = np.clip(logits, -LOGIT_CLIP, LOGIT_CLIP)
    y = np.asarray(labels, dtype=np.float64)
    weight = np.where(y > 0.5, pos_weight, 1.0)
    loss = float(np.mean(weight * (np.logaddexp(0.0, z) - y * z)))
    dz = weight * (sigmoid(z) - y) / z.shape[0]
    dz = np.where(np.abs(logits) <= LOGIT_CLIP, dz, 0.0)
    return loss, dz


class Standardizer:
    """Per-channel tactile and per-component action scaling fitted on training data."""

    def __init__(self, x_mean: FloatArray, x_std: FloatArray, a_mean: FloatArray, a_std: FloatArray):
        self.x_mean = x_mean
        self.x_std = x_std
        self.a_mean = a_mean
        self.a_std = a_std

    @classmethod
    def identity(cls, input_dim: int = N_TACTILE_CHANNELS) -> "Standardizer":
        return cls(np.zeros(input_dim), np.ones(input_dim), np.zeros(ACTION_DIM), np.ones(ACTION_DIM))

    @classmethod
    def fit(cls, x: FloatArray, a: FloatArray) -> "Standardizer":
        def _stats(arr: FloatArray) -> Tuple[FloatArray, FloatArray]:
            flat = arr.reshape(-1, arr.shape[-1])
            std = flat.std(axis=0)
            return flat.mean(axis=0), np.where(std > 1e-8, std, 1.0)

        x_mean, x_std = _stats(x)
        a_mean, a_std = _stats(a)
        return cls(x_mean, x_std, a_mean, a_std)

    def tactile(self, x: FloatArray) -> FloatArray:
        return (x - self.x_mean) / self.x_std

    def actions(self, a: FloatArray) -> FloatArray:
        return (a - self.a_mean) / self.a_std


class DetectorModel:
    """LSTM encoder and a dense H -> 1 logistic head."""

    kind: ModelKind = "detect"

    def __init__(self, lstm: LstmParams, head_w: FloatArray, head_b: FloatArray, norm: Optional[Standardizer] = None):
        if head_w.shape != (lstm.hidden_dim,) or head_b.shape != (1,):
            raise ValueError(f"Head shapes {head_w.shape}, {head_b.shape} do not match hidden_dim {lstm.hidden_dim}")
        self.lstm = lstm
        self.head_w = head_w
        self.head_b = head_b
        self.norm = norm or Standardizer.identity(lstm.input_dim)

    @classmethod
    def init(cls, hidden: int, rng: np.random.Generator, input_dim: int = N_TACTILE_CHANNELS) -> "DetectorModel":
        return cls(LstmParams.init(input_dim, hidden, rng), np.zeros(hidden), np.zeros(1))

    def parameters(self) -> Dict[str, FloatArray]:
        return {"lstm.W": self.lstm.W, "lstm.U": self.lstm.U, "lstm.b": self.lstm.b,
                "head.w": self.head_w, "head.b": self.head_b}

    def logits(self, x: FloatArray) -> FloatArray:
        h, _ = lstm_forward(self.lstm, self.norm.tactile(np.asarray(x, dtype=np.float64)))
        return np.atleast_1d(h @ self.head_w + self.head_b[0])

    def predict_batch(self, x: FloatArray) -> FloatArray:
        return sigmoid(np.clip(self.logits(x), -LOGIT_CLIP, LOGIT_CLIP))

    def predict_proba(self, window: FloatArray) -> float:
        return float(self.predict_batch(np.asarray(window)[None])[0])

    def loss_and_grads(
        self, x: FloatArray, labels: FloatArray, pos_weight: float = 1.0, a: Optional[FloatArray] = None
    ) -> Tuple[float, Grads]:
        h, cache = lstm_forward(self.lstm, self.norm.tactile(x))
        loss, dz = weighted_bce(h @ self.head_w + self.head_b[0], labels, pos_weight)
        dW, dU, db = lstm_backward(self.lstm, cache, np.outer(dz, self.head_w))
        return loss, {"lstm.W": dW, "lstm.U": dU, "lstm.b": db, "head.w": h.T @ dz, "head.b": np.array([dz.sum()])}


class PredictorModel:
    """
    Tactile LSTM (H), action encoder (T*6 -> H_a, tanh), fusion (H + H_a -> H_f, tanh)
    and a dense H_f -> 1 logistic head.
    """

    kind: ModelKind = "predict"

    def __init__(
        self,
        lstm: LstmParams,
        action_W: FloatArray,
        action_b: FloatArray,
        fusion_W: FloatArray,
        fusion_b: FloatArray,
        head_w: FloatArray,
        head_b: FloatArray,
        norm: Optional[Standardizer] = None,
    ):
        H = lstm.hidden_dim
        Ha = action_W.shape[0]
        Hf = fusion_W.shape[0]
        if (
            action_W.ndim != 2
            or action_W.shape[1] % ACTION_DIM != 0
            or action_b.shape != (Ha,)
            or fusion_W.shape != (Hf, H + Ha)
            or fusion_b.shape != (Hf,)
            or head_w.shape != (Hf,)
            or head_b.shape != (1,)
        ):
            raise ValueError(
                f"Inconsistent predictor shapes: action {action_W.shape}, fusion {fusion_W.shape}, head {head_w.shape}"
            )
        self.lstm = lstm
        self.action_W = action_W
        self.action_b = action_b
        self.fusion_W = fusion_W
        self.fusion_b = fusion_b
        self.head_w = head_w
        self.head_b = head_b
        self.norm = norm or Standardizer.identity(lstm.input_dim)

    @property
    def horizon(self) -> int:
        return int(self.action_W.shape[1] // ACTION_DIM)

    @classmethod
    def init(
        cls,
        hidden: int,
        action_hidden: int,
        fusion_hidden: int,
        horizon: int,
        rng: np.random.Generator,
        input_dim: int = N_TACTILE_CHANNELS,
    ) -> "PredictorModel":
        fan_a = horizon * ACTION_DIM
        fan_f = hidden + action_hidden
        return cls(
            LstmParams.init(input_dim, hidden, rng),
            rng.uniform(-1.0, 1.0, (action_hidden, fan_a)) / np.sqrt(fan_a),
            np.zeros(action_hidden),
            rng.uniform(-1.0, 1.0, (fusion_hidden, fan_f)) / np.sqrt(fan_f),
            np.zeros(fusion_hidden),
            np.zeros(fusion_hidden),
            np.zeros(1),
        )

    def parameters(self) -> Dict[str, FloatArray]:
        return {
            "lstm.W": self.lstm.W, "lstm.U": self.lstm.U, "lstm.b": self.lstm.b,
            "action.W": self.action_W, "action.b": self.action_b,
            "fusion.W": self.fusion_W, "fusion.b": self.fusion_b,
            "head.w": self.head_w, "head.b": self.head_b,
        }

    def _head(self, h: FloatArray, a: FloatArray) -> Tuple[FloatArray, Tuple[FloatArray, ...]]:
        flat = self.norm.actions(a).reshape(a.shape[0], -1)
        if flat.shape[1] != self.action_W.shape[1]:
            raise ValueError(f"Action block {a.shape[1:]} does not match horizon {self.horizon}")
        e = np.tanh(flat @ self.action_W.T + self.action_b)
        u = np.concatenate([h, e], axis=1)
        f = np.tanh(u @ self.fusion_W.T + self.fusion_b)
        return f @ self.head_w + self.head_b[0], (flat, e, u, f)

    def encode(self, x: FloatArray) -> FloatArray:
        """Tactile encodings (B, H) of raw filtered windows."""
        h, _ = lstm_forward(self.lstm, self.norm.tactile(np.asarray(x, dtype=np.float64)))
        return np.atleast_2d(h)

    def logits(self, x: FloatArray, a: FloatArray) -> FloatArray:
        z, _ = self._head(self.encode(x), np.asarray(a, dtype=np.float64))
        return z

    def predict_batch(self, x: FloatArray, a: FloatArray) -> FloatArray:
        return sigmoid(np.clip(self.logits(x, a), -LOGIT_CLIP, LOGIT_CLIP))

    def predict_proba(self, window: FloatArray, actions: FloatArray) -> float:
        return self.condition(window)(actions)

    def condition(self, window: FloatArray) -> Callable[[FloatArray], float]:
        """Encodes the tactile window once; the returned scorer only runs the action and fusion layers."""
        h = self.encode(np.asarray(window)[None])

        def score(actions: FloatArray) -> float:
            z, _ = self._head(h, np.asarray(actions, dtype=np.float64)[None])
            return float(sigmoid(np.clip(z, -LOGIT_CLIP, LOGIT_CLIP))[0])

        return score

    def loss_and_grads(
        self, x: FloatArray, labels: FloatArray, pos_weight: float = 1.0, a: Optional[FloatArray] = None
    ) -> Tuple[float, Grads]:
        if a is None:
            raise ValueError("PredictorModel needs an action batch")
        h, cache = lstm_forward(self.lstm, self.norm.tactile(x))
        z, (flat, e, u, f) = self._head(h, a)
        loss, dz = weighted_bce(z, labels, pos_weight)

        d_pre_f = np.outer(dz, self.head_w) * (1.0 - f * f)
        du = d_pre_f @ self.fusion_W
        H = self.lstm.hidden_dim
        d_pre_e = du[:, H:] * (1.0 - e * e)
        dW, dU, db = lstm_backward(self.lstm, cache, du[:, :H])
        return loss, {
            "lstm.W": dW, "lstm.U": dU, "lstm.b": db,
            "action.W": d_pre_e.T @ flat, "action.b": d_pre_e.sum(axis=0),
            "fusion.W": d_pre_f.T @ u, "fusion.b": d_pre_f.sum(axis=0),
            "head.w": f.T @ dz, "head.b": np.array([dz.sum()]),
        }


SlipModel = Union[DetectorModel, PredictorModel]


# --- Serialization ---


class TensorRecord(BaseModel):
    shape: List[int]
    data: List[float]


class ModelFile(BaseModel):
    format_version: int
    kind: ModelKind
    tensors: Dict[str, TensorRecord]


def _named_tensors(model: SlipModel) -> Dict[str, FloatArray]:
    out: Dict[str, FloatArray] = {}
    for gate in GATES:
        W, U, b = model.lstm.gate(gate)
        out[f"lstm.W_{gate}"] = W
        out[f"lstm.U_{gate}"] = U
        out[f"lstm.b_{gate}"] = b
    if isinstance(model, PredictorModel):
        out.update({"action.W": model.action_W, "action.b": model.action_b,
                    "fusion.W": model.fusion_W, "fusion.b": model.fusion_b})
        out.update({"norm.a_mean": model.norm.a_mean, "norm.a_std": model.norm.a_std})
    out.update({"head.w": model.head_w, "head.b": model.head_b,
                "norm.x_mean": model.norm.x_mean, "norm.x_std": model.norm.x_std})
    return out


def expected_tensor_names(kind: ModelKind) -> List[str]:
    names = [f"lstm.{m}_{g}" for g in GATES for m in ("W", "U", "b")]
    names += ["head.w", "head.b", "norm.x_mean", "norm.x_std"]
    if kind == "predict":
        names += ["action.W", "action.b", "fusion.W", "fusion.b", "norm.a_mean", "norm.a_std"]
    return sorted(names)


def save_model(model: SlipModel, path: Union[str, Path]) -> Path:
    """
    Writes the model as named-tensor JSON (row-major values, sorted keys).
    The file appears atomically, so a crash never leaves a partial model.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "tensors": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in np.ravel(arr)]}
            for name, arr in _named_tensors(model).items()
        },
    }
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True)
    os.replace(tmp, path)
    return path


def load_model(path: Union[str, Path]) -> SlipModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Model file not found: {path}")

    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"Invalid JSON in model file {path}: {e}") from e

    if not isinstance(raw, dict) or "format_version" not in raw:
        raise ModelFormatError(f"Model file {path} has no format_version")
    if raw["format_version"] != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"Model file {path} has format_version {raw['format_version']}, expected {MODEL_FORMAT_VERSION}"
        )
    try:
        parsed = ModelFile.model_validate(raw)
    except ValidationError as e:
        raise ModelFormatError(f"Malformed model file {path}: {e}") from e

    expected = expected_tensor_names(parsed.kind)
    found = sorted(parsed.tensors)
    if found != expected:
        missing = sorted(set(expected) - set(found))
        extra = sorted(set(found) - set(expected))
        raise ModelFormatError(f"Model file {path} tensor mismatch: missing={missing}, unexpected={extra}")

    t: Dict[str, FloatArray] = {}
    for name, rec in parsed.tensors.items():
        if int(np.prod(rec.shape)) != len(rec.data):
            raise ModelFormatError(f"Tensor {name} in {path}: shape {rec.shape} does not match {len(rec.data)} values")
        t[name] = np.asarray(rec.data, dtype=np.float64).reshape(rec.shape)

    try:
        lstm = LstmParams(
            np.concatenate([t[f"lstm.W_{g}"] for g in GATES]),
            np.concatenate([t[f"lstm.U_{g}"] for g in GATES]),
            np.concatenate([t[f"lstm.b_{g}"] for g in GATES]),
        )
        if parsed.kind == "detect":
            norm = Standardizer(t["norm.x_mean"], t["norm.x_std"], np.zeros(ACTION_DIM), np.ones(ACTION_DIM))
            return DetectorModel(lstm, t["head.w"], t["head.b"], norm)
        norm = Standardizer(t["norm.x_mean"], t["norm.x_std"], t["norm.a_mean"], t["norm.a_std"])
        return PredictorModel(
            lstm, t["action.W"], t["action.b"], t["fusion.W"], t["fusion.b"], t["head.w"], t["head.b"], norm
        )
    except ValueError as e:
        raise ModelFormatError(f"Inconsistent tensors in {path}: {e}") from e
