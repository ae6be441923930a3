"""Series loading, min-max normalization, rolling windows, calendar stamps,
and the unit-root drift diagnostic.

The pipeline works in float64 throughout; the model casts to its configured
precision at the graph boundary.  Normalization maps each variable through
``(x - min) / (max - min + offset)`` with ``offset = |min|`` per variable, so
the denominator stays positive for every series that is not identically zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime

import numpy as np

STAMP_DIM = 6

__all__ = [
    "STAMP_DIM",
    "DataError",
    "NormalizationError",
    "RawSeries",
    "Scaler",
    "WindowBatch",
    "adf_statistic",
    "chronological_split",
    "fit_normalize",
    "load_csv",
    "make_windows",
    "stamp_features",
    "write_csv",
]


class DataError(ValueError):
    """Raised for malformed input series or impossible windowing requests."""


class NormalizationError(ValueError):
    """Raised when a variable cannot be normalized (identically zero)."""


@dataclass
class RawSeries:
    """A multivariate series on a constant-interval calendar grid."""

    values: np.ndarray            # T x d_x, float64
    timestamps: list[datetime]    # length T, strictly increasing, equal spacing
    variable_names: list[str]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def num_variables(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "RawSeries":
        return RawSeries(self.values[start:stop], self.timestamps[start:stop],
                         list(self.variable_names))


@dataclass
class Scaler:
    """Per-variable min-max normalization state, fit on the training split."""

    min_vec: np.ndarray
    max_vec: np.ndarray
    offset: np.ndarray

    @property
    def denominator(self) -> np.ndarray:
        return self.max_vec - self.min_vec + self.offset

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.min_vec) / self.denominator

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.denominator + self.min_vec

    def to_dict(self) -> dict:
        return {"min": self.min_vec.tolist(), "max": self.max_vec.tolist(),
                "offset": self.offset.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["min"], dtype=np.float64),
                   np.asarray(d["max"], dtype=np.float64),
                   np.asarray(d["offset"], dtype=np.float64))


@dataclass
class WindowBatch:
    """Rolling input/target windows with aligned calendar-stamp features."""

    inputs: np.ndarray         # batch x w x d_x
    targets: np.ndarray        # batch x h x d_y
    input_stamps: np.ndarray   # batch x w x STAMP_DIM, integer-valued
    target_stamps: np.ndarray  # batch x h x STAMP_DIM
    starts: np.ndarray         # batch, start index of each input window

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def select(self, idx: np.ndarray) -> "WindowBatch":
        return WindowBatch(self.inputs[idx], self.targets[idx],
                           self.input_stamps[idx], self.target_stamps[idx],
                           self.starts[idx])


def _parse_timestamp(text: str, row: int) -> datetime:
    try:
        return datetime.fromisoformat(text.strip())
    except ValueError:
        raise DataError(f"row {row}: invalid ISO-8601 timestamp {text!r}") from None


def load_csv(path) -> RawSeries:
    """Load a delimited series: first column ISO-8601 timestamps, rest numeric.

    Raises :class:`DataError` on missing values, non-numeric cells, fewer than
    two data rows, or timestamps that are not strictly increasing on a constant
    interval.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise DataError(f"{path}: expected a header with a timestamp column and at least one variable")
        names = [c.strip() for c in header[1:]]
        timestamps: list[datetime] = []
        rows: list[list[float]] = []
        for lineno, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise DataError(f"row {lineno}: expected {len(header)} columns, got {len(cells)}")
            timestamps.append(_parse_timestamp(cells[0], lineno))
            parsed = []
            for name, cell in zip(names, cells[1:]):
                text = cell.strip()
                if not text:
                    raise DataError(f"row {lineno}: missing value for {name!r}")
                try:
                    value = float(text)
                except ValueError:
                    raise DataError(f"row {lineno}: non-numeric value {cell!r} for {name!r}") from None
                if math.isnan(value) or math.isinf(value):
                    raise DataError(f"row {lineno}: missing value for {name!r}")
                parsed.append(value)
            rows.append(parsed)

    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 data rows, got {len(rows)}")
    deltas = {timestamps[i + 1] - timestamps[i] for i in range(len(timestamps) - 1)}
    if any(d.total_seconds() <= 0 for d in deltas):
        raise DataError(f"{path}: timestamps must be strictly increasing")
    if len(deltas) > 1:
        raise DataError(f"{path}: irregular sampling interval; found spacings {sorted(deltas)[:3]}")
    return RawSeries(np.asarray(rows, dtype=np.float64), timestamps, names)


def write_csv(series: RawSeries, path) -> None:
    """Write a series in the same schema :func:`load_csv` reads."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + list(series.variable_names))
        for ts, row in zip(series.timestamps, series.values):
            writer.writerow([ts.isoformat(sep=" ")] + [repr(float(v)) for v in row])


def fit_normalize(series: RawSeries) -> tuple[RawSeries, Scaler]:
    """Fit per-variable min-max state on ``series`` and return it normalized.

    A constant nonzero variable maps to 0 everywhere (the |min| offset keeps
    the denominator positive); an identically zero variable has a zero
    denominator and raises :class:`NormalizationError`.
    """
    mins = series.values.min(axis=0)
    maxes = series.values.max(axis=0)
    offset = np.abs(mins)
    denom = maxes - mins + offset
    bad = np.nonzero(denom <= 0)[0]
    if bad.size:
        name = series.variable_names[bad[0]]
        raise NormalizationError(
            f"variable {name!r} is identically zero; min=max=0 gives a zero denominator")
    scaler = Scaler(mins, maxes, offset)
    return RawSeries(scaler.transform(series.values), list(series.timestamps),
                     list(series.variable_names)), scaler


def chronological_split(series: RawSeries,
                        fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
                        ) -> tuple[RawSeries, RawSeries, RawSeries]:
    """Split a series into chronological train/validation/test segments."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three values summing to 1, got {fractions}")
    t = series.length
    n_train = int(t * fractions[0])
    n_val = int(t * fractions[1])
    return (series.slice(0, n_train),
            series.slice(n_train, n_train + n_val),
            series.slice(n_train + n_val, t))


def stamp_features(instant: datetime) -> np.ndarray:
    """Calendar features: [month 1-12, day 1-31, weekday 0-6, hour 0-23,
    minute 0-59, am/pm 0-1]."""
    return np.array([instant.month, instant.day, instant.weekday(),
                     instant.hour, instant.minute, 0 if instant.hour < 12 else 1],
                    dtype=np.int64)


def make_windows(series: RawSeries, w: int, h: int,
                 target_variables: list[int] | None = None) -> WindowBatch:
    """Cut rolling windows with step 1: exactly T - w - h + 1 of them, each
    target window immediately following its input window.

    ``target_variables`` selects the target columns (default: all), so the
    target width may be narrower than the input width.
    """
    if w < 1 or h < 1:
        raise DataError(f"window lengths must be positive; got w={w}, h={h}")
    t = series.length
    if w + h > t:
        raise DataError(f"series length {t} is shorter than w + h = {w + h}")
    count = t - w - h + 1
    stamps = np.stack([stamp_features(ts) for ts in series.timestamps])
    tgt_cols = np.arange(series.num_variables) if target_variables is None \
        else np.asarray(target_variables, dtype=np.int64)

    idx = np.arange(count)
    inputs = np.stack([series.values[i:i + w] for i in idx])
    targets = np.stack([series.values[i + w:i + w + h][:, tgt_cols] for i in idx])
    input_stamps = np.stack([stamps[i:i + w] for i in idx])
    target_stamps = np.stack([stamps[i + w:i + w + h] for i in idx])
    return WindowBatch(inputs, targets, input_stamps, target_stamps, idx)


def adf_statistic(series: np.ndarray) -> float:
    """Unit-root test statistic: the t-statistic of the lagged-level
    coefficient in a constant-and-trend regression of the differenced series,
    with lag order floor((L-1)^(1/3)).

    More negative means more stationary; values near zero indicate drift.
    Raises :class:`DataError` for series shorter than 20 samples or a singular
    regression.
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    n = x.size
    if n < 20:
        raise DataError(f"unit-root statistic needs at least 20 samples, got {n}")
    lags = int(math.floor((n - 1) ** (1.0 / 3.0)))
    dx = np.diff(x)
    y = dx[lags:]
    m = y.size
    cols = [np.ones(m), np.arange(1.0, m + 1.0), x[lags:-1]]
    for j in range(1, lags + 1):
        cols.append(dx[lags - j:-j])
    design = np.column_stack(cols)
    beta, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise DataError("singular regression matrix in unit-root statistic")
    resid = y - design @ beta
    dof = m - design.shape[1]
    if dof <= 0:
        raise DataError("unit-root regression has no residual degrees of freedom")
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(design.T @ design)
    return float(beta[2] / math.sqrt(cov[2, 2]))
