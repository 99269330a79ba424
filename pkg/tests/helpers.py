"""Shared fixture builders for the test suite."""

from __future__ import annotations

import numpy as np
import pandas as pd

from h2m.dataset import TimeSeriesDataset


def daily_dates(n: int, start: str = "2011-01-01") -> np.ndarray:
    return np.arange(np.datetime64(start), np.datetime64(start) + n).astype("datetime64[D]")


def synthetic_dataset(
    n_days: int = 120,
    n_pollutants: int = 2,
    seed: int = 0,
    missing_rate: float = 0.0,
    outcome_scale: float = 30.0,
) -> TimeSeriesDataset:
    """Small well-formed dataset with optional missing pollutant cells."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_days)
    temp = 11.0 + 7.0 * np.sin(2 * np.pi * t / 365.25) + rng.normal(0, 2.0, n_days)
    rhum = 75.0 + 8.0 * np.cos(2 * np.pi * t / 365.25) + rng.normal(0, 4.0, n_days)
    level = rng.normal(0, 1.0, (n_days, n_pollutants)).cumsum(axis=0) * 0.15
    pollutants = 30.0 + 8.0 * (level - level.mean(axis=0)) + rng.normal(0, 2.0, level.shape)
    if missing_rate > 0:
        holes = rng.random(pollutants.shape) < missing_rate
        # keep at least two observed per column
        holes[:2] = False
        pollutants[holes] = np.nan
    outcome = rng.poisson(outcome_scale, n_days).astype(float)
    holiday = (pd.to_datetime(daily_dates(n_days)).weekday >= 5).astype(float)
    return TimeSeriesDataset(
        dates=daily_dates(n_days),
        outcome=outcome,
        temperature=temp,
        humidity=rhum,
        holiday=np.asarray(holiday),
        pollutants=pollutants,
        pollutant_names=tuple(f"p{j + 1}" for j in range(n_pollutants)),
    )


def write_csv(path, frame: pd.DataFrame) -> str:
    frame.to_csv(path, index=False)
    return str(path)


def basic_frame(n_days: int = 6, pollutant: str = "no2") -> pd.DataFrame:
    return pd.DataFrame(
        {
            "date": daily_dates(n_days).astype(str),
            "outcome": np.arange(30, 30 + n_days),
            "temp": np.linspace(5.0, 15.0, n_days),
            "rhum": np.linspace(60.0, 80.0, n_days),
            "holiday": [0, 1] * (n_days // 2) + [0] * (n_days % 2),
            pollutant: np.linspace(20.0, 45.0, n_days),
        }
    )
