"""Deterministic synthetic corpora for tests, demos, and the CLI smoke path."""

from __future__ import annotations

from datetime import datetime, timedelta

import numpy as np

from tcvae.data import RawSeries


def _hourly_grid(n: int, start: datetime | None = None) -> list[datetime]:
    t0 = start or datetime(2020, 1, 1, 0, 0)
    step = timedelta(hours=1)
    return [t0 + i * step for i in range(n)]


def drifting_series(length: int = 2000, num_variables: int = 3, seed: int = 0,
                    shift_every: int = 400) -> RawSeries:
    """Sinusoids plus AR(1) noise with a mean shift every ``shift_every`` steps.

    The level shifts make the marginal distribution drift across the series,
    which is the regime the model is built for.  Shift boundaries are
    staggered across variables so the joint level combinations vary; with
    simultaneous shifts a forecaster can reconstruct one variable's level
    from the others' levels, a shortcut that breaks on unseen combinations.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, 7))))
    t = np.arange(length, dtype=np.float64)
    stagger = shift_every // 3
    values = np.empty((length, num_variables))
    for v in range(num_variables):
        # sub-daily periods keep per-step motion large enough that copying
        # the last value is a weak predictor at short horizons; divisors of
        # the 24-step day keep each phase a pure function of the calendar,
        # so the stamp pathway has nothing to gain from memorizing absolute
        # position in the series
        period = (8.0, 12.0, 24.0, 6.0)[v % 4]
        phase = rng.uniform(0.0, 2.0 * np.pi)
        base = np.sin(2.0 * np.pi * t / period + phase)
        noise = np.empty(length)
        prev = 0.0
        eps = rng.normal(0.0, 0.05, size=length)
        for i in range(length):
            prev = 0.7 * prev + eps[i]
            noise[i] = prev
        index = (t.astype(int) + v * stagger) // shift_every
        shifts = rng.normal(0.0, 0.5, size=int(index.max()) + 1)
        values[:, v] = base + noise + shifts[index] + 2.0
    names = [f"var{v + 1}" for v in range(num_variables)]
    # start on the 5th so an 83-day hourly span's last month value already
    # occurs before the 70% training cut; no calendar stamp value is then
    # first seen at evaluation time
    return RawSeries(values, _hourly_grid(length, datetime(2020, 1, 5)), names)


def sine_series(length: int = 400, num_variables: int = 2) -> RawSeries:
    """Noiseless sinusoids with variable-specific periods and phases; the
    easiest possible target for convergence checks."""
    t = np.arange(length, dtype=np.float64)
    values = np.empty((length, num_variables))
    for v in range(num_variables):
        period = 24.0 + 12.0 * v
        values[:, v] = np.sin(2.0 * np.pi * t / period + 0.5 * v) + 2.0
    names = [f"var{v + 1}" for v in range(num_variables)]
    return RawSeries(values, _hourly_grid(length), names)


def white_noise_series(length: int = 1000, seed: int = 0) -> RawSeries:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, 11))))
    values = rng.standard_normal((length, 1))
    return RawSeries(values, _hourly_grid(length), ["noise"])


def random_walk_series(length: int = 1000, seed: int = 0) -> RawSeries:
    noise = white_noise_series(length, seed)
    return RawSeries(np.cumsum(noise.values, axis=0), list(noise.timestamps), ["walk"])
