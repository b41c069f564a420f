"""CSV ingestion, chronological splitting, sliding-window construction,
and synthetic series generation for desk-scale experiments."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DataError, DimensionError, ParameterError


@dataclass
class MultivariateSeries:
    values: np.ndarray  # [length, n_vars]
    timestamps: Optional[list[str]] = None
    column_names: Optional[list[str]] = None

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


@dataclass
class WindowedDataset:
    split: str
    inputs: np.ndarray   # [num_samples, L, M]
    targets: np.ndarray  # horizons [num, T, M], labels [num], or inputs again

    def __len__(self) -> int:
        return len(self.inputs)


@dataclass
class DatasetSplits:
    train: tuple[np.ndarray, np.ndarray]
    val: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray]


def load_csv(path: str, has_header: bool = True,
             timestamp_column: Optional[str] = "date") -> MultivariateSeries:
    """Read a UTF-8 comma-separated series; optional leading timestamp column."""
    rows = []
    timestamps: Optional[list[str]] = None
    names: Optional[list[str]] = None
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        ts_index = None
        width = None
        for row_num, row in enumerate(reader):
            if not row:
                continue
            if row_num == 0 and has_header:
                names = [c.strip() for c in row]
                if timestamp_column is not None and names and \
                        names[0] == timestamp_column:
                    ts_index = 0
                    timestamps = []
                    names = names[1:]
                continue
            if ts_index is not None:
                timestamps.append(row[0])
                row = row[1:]
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(
                    f"{path}: ragged row {row_num + 1} "
                    f"({len(row)} cells, expected {width})")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                bad = next(i for i, cell in enumerate(row)
                           if not _is_float(cell))
                raise DataError(
                    f"{path}: cannot parse row {row_num + 1}, column {bad + 1}: "
                    f"{row[bad]!r}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return MultivariateSeries(values=np.array(rows, dtype=np.float64),
                              timestamps=timestamps, column_names=names)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def write_csv(path: str, values: np.ndarray, header: Optional[list[str]] = None):
    """Full-precision delimited output (round-trips through load_csv)."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if header is not None:
            writer.writerow(header)
        for row in values:
            writer.writerow([repr(float(v)) for v in row])


def split_series(s: MultivariateSeries,
                 ratios: tuple[float, float, float]) -> tuple[
                     MultivariateSeries, MultivariateSeries, MultivariateSeries]:
    """Chronological contiguous train/val/test split; remainder goes to train."""
    train_r, val_r, test_r = ratios
    if min(ratios) <= 0:
        raise ParameterError("all split ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"split ratios must sum to 1, got {sum(ratios)}")
    n = s.length
    n_val = int(np.floor(val_r * n))
    n_test = int(np.floor(test_r * n))
    n_train = n - n_val - n_test

    def piece(lo, hi):
        ts = s.timestamps[lo:hi] if s.timestamps is not None else None
        return MultivariateSeries(s.values[lo:hi], ts, s.column_names)

    return (piece(0, n_train), piece(n_train, n_train + n_val),
            piece(n_train + n_val, n))


def make_windows(s: MultivariateSeries, lookback: int, horizon: int, task: str,
                 labels: Optional[list[tuple[int, int]]] = None,
                 split: str = "train") -> WindowedDataset:
    """Slice a series into model samples for the given task.

    Forecasting: every (lookback, horizon) pair at unit step.
    Anomaly detection: non-overlapping lookback windows reconstructing
    themselves. Classification: one window per (window_start, label) entry.
    """
    v = s.values
    n = s.length
    if task in ("long_term_forecast", "short_term_forecast", "forecast"):
        if n < lookback + horizon:
            raise DataError(
                f"series length {n} < lookback {lookback} + horizon {horizon}")
        count = n - lookback - horizon + 1
        inputs = np.stack([v[i:i + lookback] for i in range(count)])
        targets = np.stack([v[i + lookback:i + lookback + horizon]
                            for i in range(count)])
        return WindowedDataset(split, inputs, targets)
    if task == "anomaly_detection":
        if n < lookback:
            raise DataError(f"series length {n} < window {lookback}")
        count = n // lookback
        inputs = np.stack([v[i * lookback:(i + 1) * lookback]
                           for i in range(count)])
        return WindowedDataset(split, inputs, inputs.copy())
    if task == "classification":
        if not labels:
            raise DataError("classification windows need (start, label) entries")
        inputs, ys = [], []
        for start, label in labels:
            if start < 0 or start + lookback > n:
                raise DataError(
                    f"labeled window [{start}, {start + lookback}) out of range")
            inputs.append(v[start:start + lookback])
            ys.append(int(label))
        return WindowedDataset(split, np.stack(inputs),
                               np.array(ys, dtype=np.int64))
    raise ParameterError(f"unknown task {task!r}")


def load_labels(path: str) -> list[tuple[int, int]]:
    """Two-column `window_start,label` CSV (header optional)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row_num, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if row_num == 0 and not _is_float(row[0]):
                continue  # header
            if len(row) != 2:
                raise DataError(f"{path}: row {row_num + 1} needs 2 columns")
            out.append((int(float(row[0])), int(float(row[1]))))
    return out


def synth_generate(kind: str, params: dict, seed: int = 0):
    """Deterministic synthetic series.

    Kinds: ``sine-mixture`` (sum of sines plus optional gaussian noise),
    ``noise`` (pure gaussian), ``spiked`` (sine-mixture with rare large
    spikes; returns the spike mask as labels).
    Returns (MultivariateSeries, labels-or-None).
    """
    rng = np.random.default_rng(seed)
    length = int(params.get("length", 1000))
    n_vars = int(params.get("n_vars", 1))
    sigma = float(params.get("sigma", 0.0))
    t = np.arange(length, dtype=np.float64)

    if kind == "noise":
        scale = float(params.get("scale", 1.0))
        values = rng.normal(0.0, scale, size=(length, n_vars))
        return MultivariateSeries(values), None

    if kind in ("sine-mixture", "spiked"):
        components = params.get("components")
        n_components = int(params.get("n_components", 3))
        values = np.zeros((length, n_vars))
        for j in range(n_vars):
            if components is not None:
                comps = components
            else:
                comps = [(rng.uniform(0.5, 1.5),
                          rng.uniform(0.005, 0.05),
                          rng.uniform(0.0, 2 * np.pi))
                         for _ in range(n_components)]
            for amp, freq, phase in comps:
                values[:, j] += amp * np.sin(2 * np.pi * freq * t + phase)
        if sigma > 0:
            values += rng.normal(0.0, sigma, size=values.shape)
        if kind == "sine-mixture":
            return MultivariateSeries(values), None

        spike_rate = float(params.get("spike_rate", 0.01))
        base_sigma = sigma if sigma > 0 else float(np.std(values))
        magnitude = float(params.get("spike_magnitude", 6.0 * max(base_sigma, 1e-3)))
        mask = rng.random(length) < spike_rate
        signs = np.where(rng.random(length) < 0.5, -1.0, 1.0)
        for j in range(n_vars):
            values[mask, j] += signs[mask] * magnitude
        return MultivariateSeries(values), mask.astype(np.int64)

    raise ParameterError(f"unknown synthetic kind {kind!r}")


def synth_classification(n_windows: int, lookback: int, seed: int = 0):
    """Balanced two-class corpus: sine windows (0) vs matched-variance noise (1).

    Returns (MultivariateSeries, labels) where the series is the window
    concatenation and labels are (window_start, class) pairs.
    """
    rng = np.random.default_rng(seed)
    segments, labels = [], []
    for i in range(n_windows):
        label = i % 2
        start = i * lookback
        amp = rng.uniform(0.8, 1.2)
        if label == 0:
            freq = rng.uniform(0.02, 0.08)
            phase = rng.uniform(0.0, 2 * np.pi)
            seg = amp * np.sin(2 * np.pi * freq * np.arange(lookback) + phase)
        else:
            seg = rng.normal(0.0, amp / np.sqrt(2.0), size=lookback)
        segments.append(seg[:, None])
        labels.append((start, label))
    series = MultivariateSeries(np.concatenate(segments, axis=0))
    return series, labels
