"""Figure rendering for command-line reports.

All figures are written straight to files with the Agg backend, so the
commands work on headless machines. Each plotting helper returns the path
it wrote, letting callers log artifact locations uniformly.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_loss_curve", "save_forecast_figure", "save_drift_chart",
           "save_error_curve"]


def save_loss_curve(trace, path) -> Path:
    """Line plot of per-epoch training loss."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = np.arange(1, len(trace) + 1)
    ax.plot(epochs, np.asarray(trace, dtype=float), marker="o", markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.set_title("training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_forecast_figure(history, actual, predicted, variable_names, path) -> Path:
    """History tail plus actual and predicted horizon, one panel per variable.

    history: (w, d) raw-unit context window, may be None to plot horizon only.
    actual:  (h, d) raw-unit truth for the horizon, may be None.
    predicted: (h, d) raw-unit forecast.
    """
    path = Path(path)
    predicted = np.asarray(predicted, dtype=float)
    num_vars = predicted.shape[1]
    fig, axes = plt.subplots(num_vars, 1, figsize=(8, 2.2 * num_vars),
                             sharex=True, squeeze=False)
    horizon = predicted.shape[0]
    context = 0 if history is None else np.asarray(history, dtype=float).shape[0]
    future_t = np.arange(context, context + horizon)
    for idx in range(num_vars):
        ax = axes[idx][0]
        if history is not None:
            hist = np.asarray(history, dtype=float)
            ax.plot(np.arange(context), hist[:, idx], color="0.4", label="history")
        if actual is not None:
            act = np.asarray(actual, dtype=float)
            ax.plot(future_t, act[:, idx], color="tab:green", label="actual")
        ax.plot(future_t, predicted[:, idx], color="tab:red", linestyle="--",
                label="predicted")
        name = variable_names[idx] if idx < len(variable_names) else f"var{idx + 1}"
        ax.set_ylabel(name)
        ax.grid(True, alpha=0.3)
        if idx == 0:
            ax.legend(loc="upper left", fontsize=8)
    axes[-1][0].set_xlabel("time step")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_drift_chart(names, statistics, average, path) -> Path:
    """Bar chart of per-variable unit-root test statistics.

    More negative bars mean stronger evidence of stationarity; a dashed
    line marks the cross-variable average.
    """
    path = Path(path)
    stats = np.asarray(statistics, dtype=float)
    fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(names) + 2), 4))
    positions = np.arange(len(names))
    ax.bar(positions, stats, color="tab:blue", alpha=0.8)
    ax.axhline(average, color="tab:red", linestyle="--",
               label=f"average = {average:.3f}")
    ax.set_xticks(positions)
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("unit-root statistic")
    ax.set_title("per-variable drift statistics")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_error_curve(per_window_mae, path) -> Path:
    """Per-window MAE across a rolling evaluation."""
    path = Path(path)
    values = np.asarray(per_window_mae, dtype=float)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(np.arange(len(values)), values, linewidth=1.0)
    ax.set_xlabel("window index")
    ax.set_ylabel("MAE")
    ax.set_title("rolling evaluation error")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
