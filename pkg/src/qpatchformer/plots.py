"""Figure rendering for run artifacts.

Each function reads one of the delimited outputs a command writes into
its output directory and renders a PNG next to it. Used by the `report`
CLI subcommand; importing this module does not require a display.
"""

from __future__ import annotations

import os
import re

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_EPOCH_LINE = re.compile(
    r"epoch=(\d+) train_loss=([\d.eE+-]+) val_loss=([\d.eE+-]+)")


def plot_history(history_path: str, out_path: str) -> bool:
    """Train/validation loss curves from a history.log file."""
    if not os.path.exists(history_path):
        return False
    epochs, train, val = [], [], []
    with open(history_path, encoding="utf-8") as fh:
        for line in fh:
            m = _EPOCH_LINE.search(line)
            if m:
                epochs.append(int(m.group(1)))
                train.append(float(m.group(2)))
                val.append(float(m.group(3)))
    if not epochs:
        return False
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, train, marker="o", label="train")
    ax.plot(epochs, val, marker="s", label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("Training history")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return True


def plot_forecast(forecast_path: str, out_path: str,
                  context: np.ndarray | None = None) -> bool:
    """Forecast rows per variate, optionally preceded by trailing context."""
    if not os.path.exists(forecast_path):
        return False
    fc = np.atleast_2d(np.loadtxt(forecast_path, delimiter=",", skiprows=1))
    if fc.ndim == 1:
        fc = fc[:, None]
    fig, ax = plt.subplots(figsize=(7, 4))
    offset = 0
    if context is not None:
        offset = len(context)
        for j in range(context.shape[1]):
            ax.plot(np.arange(offset), context[:, j], color="0.6", lw=0.8)
    for j in range(fc.shape[1]):
        ax.plot(np.arange(offset, offset + len(fc)), fc[:, j],
                label=f"var {j}")
    if offset:
        ax.axvline(offset - 0.5, color="k", ls="--", lw=0.8)
    ax.set_xlabel("time step")
    ax.set_ylabel("value")
    ax.set_title("Forecast")
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return True


def plot_anomalies(anomalies_path: str, out_path: str) -> bool:
    """Reconstruction-error scores with flagged points highlighted."""
    if not os.path.exists(anomalies_path):
        return False
    rows = np.atleast_2d(np.loadtxt(anomalies_path, delimiter=",", skiprows=1))
    if rows.size == 0:
        return False
    idx, score, flag = rows[:, 0], rows[:, 1], rows[:, 2] > 0.5
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(idx, score, lw=0.8, label="score")
    if flag.any():
        ax.scatter(idx[flag], score[flag], color="red", s=12, zorder=3,
                   label="flagged")
    ax.set_xlabel("time step")
    ax.set_ylabel("reconstruction error")
    ax.set_title("Anomaly scores")
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return True


def render_report(out_dir: str) -> list[str]:
    """Render every figure whose source artifact exists; return written paths."""
    written = []
    jobs = [
        (plot_history, "history.log", "history.png"),
        (plot_forecast, "forecast.csv", "forecast.png"),
        (plot_anomalies, "anomalies.csv", "anomalies.png"),
    ]
    for fn, src, dst in jobs:
        src_path = os.path.join(out_dir, src)
        dst_path = os.path.join(out_dir, dst)
        if fn(src_path, dst_path):
            written.append(dst_path)
    return written
