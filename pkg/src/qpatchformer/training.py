"""Losses, Adam optimization with early stopping, and the task decision
rules (class argmax, reconstruction-error thresholding)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Tensor
from .exceptions import DataError, DimensionError, GraphError, ParameterError, TrainingError
from .model import Model, named_parameters

GRAD_CLIP_NORM = 5.0


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    anomaly_ratio: float = 1.0  # percent

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError("learning rate must be positive")
        if self.patience < 1:
            raise ParameterError("patience must be >= 1")
        if not 0 < self.anomaly_ratio < 50:
            raise ParameterError("anomaly_ratio must be in (0, 50) percent")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    epoch_time_s: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over every element (per-channel L2 averaged)."""
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).sum() * (1.0 / pred.size)


def cross_entropy_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log softmax probability of the true class."""
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise DimensionError(f"expected {b} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise DataError(f"labels must lie in [0, {c})")
    x = logits.data
    peak = x.max(axis=1, keepdims=True)
    lse = peak + np.log(np.exp(x - peak).sum(axis=1, keepdims=True))
    probs = np.exp(x - lse)
    loss_val = float(np.mean(lse[:, 0] - x[np.arange(b), labels]))
    out = Tensor(loss_val)
    if logits._needs_graph():
        onehot = np.zeros_like(x)
        onehot[np.arange(b), labels] = 1.0
        def bw(g):
            logits._accumulate(g * (probs - onehot) / b)
        out._parents, out._backward = (logits,), bw
    return out


class Adam:
    """Plain Adam over named parameter tensors."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {name: np.zeros_like(t.data) for name, t in params}
        self.v = {name: np.zeros_like(t.data) for name, t in params}
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, tensor in self.params:
            g = tensor.grad
            if g is None:
                continue
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            tensor.data = tensor.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for _, tensor in self.params:
            tensor.zero_grad()


def clip_grad_norm(params: list[tuple[str, Tensor]], max_norm: float) -> float:
    total = 0.0
    for _, tensor in params:
        if tensor.grad is not None:
            total += float(np.sum(tensor.grad ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for _, tensor in params:
            if tensor.grad is not None:
                tensor.grad = tensor.grad * scale
    return norm


def _batch_loss(model: Model, inputs: np.ndarray, targets, rng,
                training: bool) -> Tensor:
    pred = model.forward(inputs, rng=rng, training=training)
    if model.cfg.task == "classification":
        return cross_entropy_loss(pred, targets)
    return mse_loss(pred, Tensor(np.asarray(targets, dtype=np.float64)))


def _eval_loss(model: Model, inputs, targets, batch_size: int) -> float:
    total, count = 0.0, 0
    for start in range(0, len(inputs), batch_size):
        xb = inputs[start:start + batch_size]
        tb = targets[start:start + batch_size]
        loss = _batch_loss(model, xb, tb, rng=None, training=False)
        total += loss.item() * len(xb)
        count += len(xb)
    return total / count


def train(model: Model, data, cfg: TrainConfig,
          log=None) -> tuple["ModelParams", TrainHistory]:
    """Adam training with early stopping on validation loss.

    ``data`` carries train/val splits as (inputs, targets) arrays
    (see data.DatasetSplits). The best-validation parameters are
    restored into the model before returning.
    """
    train_x, train_y = data.train
    val_x, val_y = data.val
    if len(train_x) == 0 or len(val_x) == 0:
        raise DataError("train and validation splits must be nonempty")

    shuffle_rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(cfg.seed + 1)
    params = model.named_parameters()
    optimizer = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    history = TrainHistory()

    best_val = np.inf
    best_state = None
    bad_epochs = 0

    for epoch in range(1, cfg.max_epochs + 1):
        tic = time.perf_counter()
        order = shuffle_rng.permutation(len(train_x))
        epoch_loss, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            optimizer.zero_grad()
            loss = _batch_loss(model, train_x[idx],
                               train_y[idx] if hasattr(train_y, "__getitem__") else train_y,
                               dropout_rng, training=True)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite training loss {value} at epoch {epoch}")
            loss.backward()
            clip_grad_norm(params, GRAD_CLIP_NORM)
            optimizer.step()
            epoch_loss += value * len(idx)
            seen += len(idx)

        train_loss = epoch_loss / seen
        val_loss = _eval_loss(model, val_x, val_y, cfg.batch_size)
        elapsed = time.perf_counter() - tic
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.epoch_time_s.append(elapsed)
        if log is not None:
            log(f"epoch={epoch} train_loss={train_loss:.6f} "
                f"val_loss={val_loss:.6f} time_s={elapsed:.3f}")

        if val_loss < best_val:
            best_val = val_loss
            history.best_epoch = epoch
            best_state = [tensor.data.copy() for _, tensor in params]
            bad_epochs = 0
        else:
            bad_epochs += 1
        history.stopped_epoch = epoch
        if bad_epochs >= cfg.patience:
            break

    if best_state is not None:
        for (_, tensor), saved in zip(params, best_state):
            tensor.data = saved
    return model.params, history


def classify(logits: np.ndarray) -> np.ndarray:
    """Argmax over classes; ties break toward the lower index."""
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError("expected [batch, classes>=2] logits")
    return np.argmax(logits, axis=1)


def anomaly_scores(x: np.ndarray, recon: np.ndarray) -> np.ndarray:
    """Per-timestep mean (over variates) squared reconstruction error."""
    x = np.asarray(x, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if x.shape != recon.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {recon.shape}")
    return np.mean((x - recon) ** 2, axis=-1)


def detect_anomalies(train_scores: np.ndarray, test_scores: np.ndarray,
                     anomaly_ratio: float) -> np.ndarray:
    """Flag test scores above the (100 - ratio)-th percentile of all scores."""
    train_scores = np.asarray(train_scores, dtype=np.float64).reshape(-1)
    test_scores = np.asarray(test_scores, dtype=np.float64).reshape(-1)
    if train_scores.size == 0 or test_scores.size == 0:
        raise DataError("score sets must be nonempty")
    combined = np.concatenate([train_scores, test_scores])
    threshold = np.percentile(combined, 100.0 - anomaly_ratio)
    return test_scores > threshold
