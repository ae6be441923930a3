"""Rolling-window evaluation: the three error metrics, per-window traces,
and two sanity baselines.

MAPE follows the literal indicator form: zero-magnitude targets contribute
nothing to the numerator but stay in the denominator count.  Metrics are
computed in normalized space by default; ``raw_units=True`` maps predictions
and targets back through the scaler first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from tcvae.data import DataError, RawSeries, Scaler, make_windows

__all__ = [
    "MetricReport",
    "compute_metrics",
    "mean_baseline",
    "persistence_baseline",
    "rolling_baseline",
    "rolling_evaluate",
]


@dataclass
class MetricReport:
    """Aggregate errors over a set of (prediction, target) points."""

    mae: float
    rmse: float
    mape: float
    count: int
    zero_targets: int

    def to_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "mape": self.mape,
                "count": self.count, "zero_targets": self.zero_targets}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def as_text(self) -> str:
        return "\n".join(f"{key} = {value}" for key, value in self.to_dict().items())


def compute_metrics(predictions: np.ndarray, targets: np.ndarray) -> MetricReport:
    """MAE, RMSE, and indicator-form MAPE over all points."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"prediction shape {predictions.shape} does not match "
                         f"target shape {targets.shape}")
    diff = np.abs(predictions - targets)
    count = diff.size
    nonzero = np.abs(targets) > 0
    ratios = np.zeros_like(diff)
    np.divide(diff, np.abs(targets), out=ratios, where=nonzero)
    return MetricReport(
        mae=float(diff.mean()),
        rmse=float(np.sqrt((diff * diff).mean())),
        mape=float(ratios.sum() / count),
        count=int(count),
        zero_targets=int(count - nonzero.sum()),
    )


def persistence_baseline(window: np.ndarray, h: int) -> np.ndarray:
    """Repeat the window's last observation for every horizon step."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape[0] == 0:
        raise ValueError("persistence baseline needs a non-empty window")
    return np.repeat(window[-1:], h, axis=0)


def mean_baseline(window: np.ndarray, h: int) -> np.ndarray:
    """Repeat the window's per-variable mean for every horizon step."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape[0] == 0:
        raise ValueError("mean baseline needs a non-empty window")
    return np.repeat(window.mean(axis=0, keepdims=True), h, axis=0)


def _normalized_windows(series: RawSeries, scaler: Scaler, w: int, h: int,
                        target_columns):
    if series.length < w + h:
        raise DataError(f"series length {series.length} is shorter than "
                        f"w + h = {w + h}")
    normalized = RawSeries(scaler.transform(series.values),
                           list(series.timestamps), list(series.variable_names))
    cols = None if target_columns is None else list(target_columns)
    return make_windows(normalized, w, h, target_variables=cols)


def _to_raw(values: np.ndarray, scaler: Scaler, columns: np.ndarray) -> np.ndarray:
    return values * scaler.denominator[columns] + scaler.min_vec[columns]


def rolling_evaluate(model, series: RawSeries, scaler: Scaler, seed=0,
                     raw_units: bool = False,
                     ) -> tuple[MetricReport, list[MetricReport]]:
    """Forecast every rolling window of a raw-unit series and aggregate.

    Returns the aggregate report and one report per window, in window order.
    """
    cfg = model.config
    windows = _normalized_windows(series, scaler, cfg.w, cfg.h, cfg.target_columns)
    predictions = model.predict_normalized(windows.inputs, windows.input_stamps,
                                           windows.target_stamps, seed)
    targets = windows.targets
    if raw_units:
        columns = np.asarray(cfg.target_columns if cfg.target_columns is not None
                             else range(cfg.d_x))
        predictions = _to_raw(predictions, scaler, columns)
        targets = _to_raw(targets, scaler, columns)
    aggregate = compute_metrics(predictions, targets)
    per_window = [compute_metrics(predictions[i], targets[i])
                  for i in range(len(windows))]
    return aggregate, per_window


def rolling_baseline(series: RawSeries, scaler: Scaler, w: int, h: int,
                     kind: str = "persistence", raw_units: bool = False,
                     target_columns=None) -> MetricReport:
    """Evaluate a reference predictor over the same rolling windows."""
    if kind not in ("persistence", "mean"):
        raise ValueError(f"unknown baseline {kind!r}")
    windows = _normalized_windows(series, scaler, w, h, target_columns)
    columns = np.asarray(target_columns if target_columns is not None
                         else range(series.num_variables))
    picked = windows.inputs[:, :, columns]
    if kind == "persistence":
        predictions = np.repeat(picked[:, -1:, :], h, axis=1)
    else:
        predictions = np.repeat(picked.mean(axis=1, keepdims=True), h, axis=1)
    targets = windows.targets
    if raw_units:
        predictions = _to_raw(predictions, scaler, columns)
        targets = _to_raw(targets, scaler, columns)
    return compute_metrics(predictions, targets)
