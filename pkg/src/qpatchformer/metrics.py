"""Evaluation metrics: MSE/MAE, the M4-style short-term family
(sMAPE, MAPE, MASE, OWA with a Naive2 reference), classification
accuracy, and anomaly precision/recall/F1."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DataError, DimensionError

# 90% two-sided significance for the seasonality autocorrelation test
_SEASONALITY_Z = 1.645


@dataclass
class MetricReport:
    task: str
    metrics: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def to_json(self) -> str:
        payload = {"task": self.task, "metrics": self.metrics,
                   "counts": self.counts, "flags": self.flags}
        return json.dumps(payload, sort_keys=True, indent=2)


def regression_metrics(pred: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise DataError("empty prediction array")
    err = pred - target
    return float(np.mean(err ** 2)), float(np.mean(np.abs(err)))


def _acf(x: np.ndarray, lag: int) -> float:
    x = x - x.mean()
    denom = float(np.sum(x * x))
    if denom == 0.0:
        return 0.0
    return float(np.sum(x[lag:] * x[:-lag]) / denom)


def is_seasonal(insample: np.ndarray, m: int) -> bool:
    """Autocorrelation test at lag m against the 90% significance band."""
    if m <= 1 or len(insample) < 3 * m:
        return False
    r = [_acf(insample, lag) for lag in range(1, m + 1)]
    limit = _SEASONALITY_Z * np.sqrt((1.0 + 2.0 * np.sum(np.square(r[:-1])))
                                     / len(insample))
    return abs(r[-1]) > limit


def seasonal_indices(insample: np.ndarray, m: int) -> np.ndarray:
    """Classical multiplicative decomposition indices, normalized to mean 1."""
    n = len(insample)
    if m % 2 == 0:
        kernel = np.concatenate([[0.5], np.ones(m - 1), [0.5]]) / m
    else:
        kernel = np.ones(m) / m
    trend = np.convolve(insample, kernel, mode="valid")
    offset = (len(kernel) - 1) // 2
    ratios = np.full(n, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios[offset:offset + len(trend)] = \
            insample[offset:offset + len(trend)] / trend
    indices = np.empty(m)
    for phase in range(m):
        vals = ratios[phase::m]
        vals = vals[np.isfinite(vals)]
        indices[phase] = np.mean(vals) if len(vals) else 1.0
    indices *= m / indices.sum()
    return indices


def naive2_forecast(insample: np.ndarray, horizon: int, m: int) -> np.ndarray:
    """Seasonally adjusted last-value forecast (plain naive when non-seasonal)."""
    insample = np.asarray(insample, dtype=np.float64)
    n = len(insample)
    if is_seasonal(insample, m):
        idx = seasonal_indices(insample, m)
        phases = np.arange(n) % m
        adjusted = insample / idx[phases]
        future_phases = (np.arange(n, n + horizon)) % m
        return adjusted[-1] * idx[future_phases]
    return np.full(horizon, insample[-1])


def _smape(pred: np.ndarray, target: np.ndarray, flags: list) -> float:
    denom = np.abs(target) + np.abs(pred)
    keep = denom > 0
    if not np.all(keep):
        flags.append("smape_zero_denominator_terms_excluded")
    if not np.any(keep):
        return 0.0
    return float(np.mean(200.0 * np.abs(target[keep] - pred[keep]) / denom[keep]))


def _mape(pred: np.ndarray, target: np.ndarray, flags: list) -> float:
    keep = np.abs(target) > 0
    if not np.all(keep):
        flags.append("mape_zero_denominator_terms_excluded")
    if not np.any(keep):
        return 0.0
    return float(np.mean(100.0 * np.abs(target[keep] - pred[keep])
                         / np.abs(target[keep])))


def _mase(pred: np.ndarray, target: np.ndarray, insample: np.ndarray,
          m: int, flags: list) -> float:
    scale = np.mean(np.abs(insample[m:] - insample[:-m]))
    if scale == 0.0:
        flags.append("mase_zero_scale")
        return float("nan")
    return float(np.mean(np.abs(target - pred)) / scale)


def m4_metrics(pred: np.ndarray, target: np.ndarray, insample: np.ndarray,
               seasonality: int) -> dict:
    """sMAPE / MAPE / MASE and OWA against the Naive2 reference forecast."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    insample = np.asarray(insample, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise DimensionError("pred and target must have the same length")
    if len(insample) <= seasonality:
        raise DataError("insample must be longer than the seasonality")

    flags: list[str] = []
    smape = _smape(pred, target, flags)
    mape = _mape(pred, target, flags)
    mase = _mase(pred, target, insample, seasonality, flags)

    naive2 = naive2_forecast(insample, len(target), seasonality)
    smape_n2 = _smape(naive2, target, flags)
    mase_n2 = _mase(naive2, target, insample, seasonality, flags)
    if smape_n2 == 0.0 and smape == 0.0:
        owa = 0.0
    elif smape_n2 == 0.0 or mase_n2 == 0.0 or not np.isfinite(mase):
        flags.append("owa_divergent_reference")
        owa = float("nan")
    else:
        owa = 0.5 * (smape / smape_n2 + mase / mase_n2)
    return {"smape": smape, "mape": mape, "mase": mase, "owa": owa,
            "flags": flags}


def classification_metrics(pred_labels: np.ndarray,
                           true_labels: np.ndarray) -> float:
    pred_labels = np.asarray(pred_labels)
    true_labels = np.asarray(true_labels)
    if pred_labels.shape != true_labels.shape:
        raise DimensionError("label arrays must have equal length")
    if pred_labels.size == 0:
        raise DataError("empty label arrays")
    return float(np.mean(pred_labels == true_labels))


def _segments(truth: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous [start, end) runs of positive truth."""
    segs = []
    start = None
    for i, v in enumerate(truth):
        if v and start is None:
            start = i
        elif not v and start is not None:
            segs.append((start, i))
            start = None
    if start is not None:
        segs.append((start, len(truth)))
    return segs


def anomaly_metrics(flags: np.ndarray, truth: np.ndarray,
                    point_adjust: bool = False) -> dict:
    """Precision / recall / F1; optional segment-level point adjustment."""
    flags = np.asarray(flags, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if flags.shape != truth.shape:
        raise DimensionError("flags and truth must have equal length")
    if point_adjust:
        flags = flags.copy()
        for start, end in _segments(truth):
            if flags[start:end].any():
                flags[start:end] = True
    tp = int(np.sum(flags & truth))
    fp = int(np.sum(flags & ~truth))
    fn = int(np.sum(~flags & truth))
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall_defined = bool(truth.any())
    recall = tp / (tp + fn) if recall_defined else None
    if recall_defined and (precision + recall) > 0:
        f1 = 2 * precision * recall / (precision + recall)
    elif recall_defined:
        f1 = 0.0
    else:
        f1 = None
    return {"precision": precision, "recall": recall, "f1": f1,
            "recall_defined": recall_defined}
