"""Daily time-series dataset handling.

A dataset couples a contiguous run of calendar days with a fully observed
daily count outcome, fully observed meteorology (temperature, relative
humidity) and holiday indicator, and one or more pollutant concentration
series that may contain missing days.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import (
    EmptyPollutantColumn,
    InsufficientOverlap,
    MissingColumn,
    MissingOutcome,
    NonContiguousDates,
    ZeroVariance,
)

# Eigenvalues below this floor are clipped when projecting a pairwise
# correlation matrix back to positive definiteness.
EIGENVALUE_FLOOR = 1.0e-8

PERCENTILE_LEVELS = (10.0, 25.0, 50.0, 75.0, 90.0)


# ==== types ====


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Validated daily series: counts, weather, holiday flag and pollutants.

    ``pollutants`` holds NaN at unobserved cells; ``mask`` is True where a
    concentration was observed. All other fields are fully observed.
    """

    dates: np.ndarray
    outcome: np.ndarray
    temperature: np.ndarray
    humidity: np.ndarray
    holiday: np.ndarray
    pollutants: np.ndarray
    pollutant_names: tuple[str, ...]
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        pollutants = np.asarray(self.pollutants, dtype=float)
        if pollutants.ndim == 1:
            pollutants = pollutants.reshape(-1, 1)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "outcome", np.asarray(self.outcome, dtype=float))
        object.__setattr__(self, "temperature", np.asarray(self.temperature, dtype=float))
        object.__setattr__(self, "humidity", np.asarray(self.humidity, dtype=float))
        object.__setattr__(self, "holiday", np.asarray(self.holiday, dtype=float))
        object.__setattr__(self, "pollutants", pollutants)
        object.__setattr__(self, "pollutant_names", tuple(self.pollutant_names))
        object.__setattr__(self, "mask", np.isfinite(pollutants))
        self._validate()

    def _validate(self):
        t = self.dates.size
        if t == 0:
            raise NonContiguousDates("dataset has no rows")
        gaps = np.diff(self.dates).astype("timedelta64[D]").astype(int)
        if np.any(gaps != 1):
            raise NonContiguousDates(
                "dates must be strictly increasing consecutive days without gaps"
            )
        for name, arr in (
            ("outcome", self.outcome),
            ("temperature", self.temperature),
            ("humidity", self.humidity),
            ("holiday", self.holiday),
        ):
            if arr.shape != (t,):
                raise MissingOutcome(f"{name} length {arr.shape} does not match {t} days")
            if not np.all(np.isfinite(arr)):
                raise MissingOutcome(f"{name} contains missing or non-numeric entries")
        if np.any(self.outcome < 0):
            raise MissingOutcome("outcome counts must be non-negative")
        if self.pollutants.shape != (t, len(self.pollutant_names)):
            raise MissingColumn("pollutant matrix does not match pollutant names")
        if len(self.pollutant_names) < 1:
            raise MissingColumn("at least one pollutant column is required")
        observed = self.mask.sum(axis=0)
        for name, count in zip(self.pollutant_names, observed):
            if count < 2:
                raise EmptyPollutantColumn(
                    f"pollutant {name!r} has {int(count)} observed values (need >= 2)"
                )

    @property
    def n_days(self) -> int:
        return self.dates.size

    @property
    def n_pollutants(self) -> int:
        return len(self.pollutant_names)

    def content_hash(self) -> str:
        """SHA-256 over the canonical array contents (reproducibility key)."""
        digest = hashlib.sha256()
        for part in (
            self.dates.astype("datetime64[D]").astype(np.int64),
            self.outcome,
            self.temperature,
            self.humidity,
            self.holiday,
            self.pollutants,
        ):
            digest.update(np.ascontiguousarray(part).tobytes())
        digest.update("|".join(self.pollutant_names).encode("utf-8"))
        return digest.hexdigest()


@dataclass(frozen=True)
class ScalingParams:
    """Per-pollutant mean and sd computed over observed entries only."""

    means: np.ndarray
    sds: np.ndarray
    pollutant_names: tuple[str, ...]


@dataclass(frozen=True)
class Descriptives:
    """Per-variable observed counts, percentiles and interquartile ranges."""

    variables: tuple[str, ...]
    n_observed: np.ndarray
    percentiles: np.ndarray  # (n_variables, 5) at the 10/25/50/75/90 levels
    iqr: np.ndarray

    def row(self, variable: str) -> dict[str, float]:
        i = self.variables.index(variable)
        out = {"n_observed": int(self.n_observed[i]), "iqr": float(self.iqr[i])}
        for level, value in zip(PERCENTILE_LEVELS, self.percentiles[i]):
            out[f"p{level:g}"] = float(value)
        return out

    def to_frame(self) -> pd.DataFrame:
        data = {"variable": list(self.variables), "n_observed": self.n_observed}
        for j, level in enumerate(PERCENTILE_LEVELS):
            data[f"p{level:g}"] = self.percentiles[:, j]
        data["iqr"] = self.iqr
        return pd.DataFrame(data)


# ==== loading ====


def load_dataset(
    path,
    pollutant_columns: list[str] | tuple[str, ...],
    *,
    date_column: str = "date",
    outcome_column: str = "outcome",
    temperature_column: str = "temp",
    humidity_column: str = "rhum",
    holiday_column: str = "holiday",
) -> TimeSeriesDataset:
    """Read a daily CSV file into a validated :class:`TimeSeriesDataset`.

    The file must contain a header row with the named columns. Empty or
    non-numeric pollutant cells become missing; missing outcome, meteorology
    or holiday entries are an error.

    Raises
    ------
    MissingColumn, NonContiguousDates, MissingOutcome, EmptyPollutantColumn
    """
    pollutant_columns = list(pollutant_columns)
    if not pollutant_columns:
        raise MissingColumn("at least one pollutant column must be named")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    required = [date_column, outcome_column, temperature_column, humidity_column, holiday_column]
    for column in required + pollutant_columns:
        if column not in frame.columns:
            raise MissingColumn(f"column {column!r} not found in {path}")

    try:
        dates = pd.to_datetime(frame[date_column], format="ISO8601").to_numpy(
            dtype="datetime64[D]"
        )
    except (ValueError, TypeError) as exc:
        raise NonContiguousDates(f"unparseable date entries: {exc}") from exc

    def _numeric(column: str) -> np.ndarray:
        values = pd.to_numeric(frame[column].str.strip(), errors="coerce").to_numpy(dtype=float)
        return values

    fully_observed = {name: _numeric(name) for name in required[1:]}
    for name, values in fully_observed.items():
        if not np.all(np.isfinite(values)):
            raise MissingOutcome(f"column {name!r} has missing or non-numeric entries")

    pollutants = np.column_stack([_numeric(name) for name in pollutant_columns])
    return TimeSeriesDataset(
        dates=dates,
        outcome=fully_observed[outcome_column],
        temperature=fully_observed[temperature_column],
        humidity=fully_observed[humidity_column],
        holiday=fully_observed[holiday_column],
        pollutants=pollutants,
        pollutant_names=tuple(pollutant_columns),
    )


# ==== standardization ====


def _masked_mean_sd(values: np.ndarray, mask: np.ndarray, names) -> tuple[np.ndarray, np.ndarray]:
    means = np.empty(values.shape[1])
    sds = np.empty(values.shape[1])
    for j in range(values.shape[1]):
        observed = values[mask[:, j], j]
        means[j] = observed.mean()
        sds[j] = observed.std(ddof=1)
        if not sds[j] > 0:
            raise ZeroVariance(f"column {names[j]!r} has zero variance over observed entries")
    return means, sds


def standardize(dataset: TimeSeriesDataset) -> tuple[np.ndarray, ScalingParams]:
    """Center/scale each pollutant over its observed entries (sample sd).

    Missing cells stay NaN. Returns the standardized matrix and the
    per-pollutant scaling parameters needed to undo the transform.
    """
    means, sds = _masked_mean_sd(dataset.pollutants, dataset.mask, dataset.pollutant_names)
    scaled = (dataset.pollutants - means) / sds
    return scaled, ScalingParams(means=means, sds=sds, pollutant_names=dataset.pollutant_names)


def standardize_series(values: np.ndarray, name: str = "series") -> tuple[np.ndarray, float, float]:
    """Standardize one fully observed series; returns (scaled, mean, sd)."""
    values = np.asarray(values, dtype=float)
    mean = values.mean()
    sd = values.std(ddof=1)
    if not sd > 0:
        raise ZeroVariance(f"column {name!r} has zero variance")
    return (values - mean) / sd, float(mean), float(sd)


class PollutantScaler(TransformerMixin, BaseEstimator):
    """Mask-aware per-column standardizer with an exact inverse.

    Accepts matrices with NaN marking missing entries; statistics are
    computed over observed cells only.
    """

    def fit(self, X, y=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mask = np.isfinite(X)
        if np.any(mask.sum(axis=0) < 2):
            raise EmptyPollutantColumn("every column needs >= 2 observed values")
        names = [f"x{j}" for j in range(X.shape[1])]
        self.means_, self.sds_ = _masked_mean_sd(X, mask, names)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X - self.means_) / self.sds_

    def inverse_transform(self, X):
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X * self.sds_ + self.means_

    def _check_fitted(self):
        if not hasattr(self, "means_"):
            raise AttributeError("PollutantScaler is not fitted yet; call fit first")


# ==== correlation ====


def empirical_correlation(standardized: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Pairwise-complete Pearson correlation, projected to positive definite.

    Each pair uses the days where both series are observed (re-centered on
    the joint sample). The assembled matrix can be indefinite, so eigenvalues
    are clipped at a small floor and the result is renormalized to a unit
    diagonal.

    Raises
    ------
    InsufficientOverlap
        If some pair has fewer than two jointly observed days.
    """
    values = np.atleast_2d(np.asarray(standardized, dtype=float))
    if mask is None:
        mask = np.isfinite(values)
    p = values.shape[1]
    corr = np.eye(p)
    for i in range(p):
        for j in range(i + 1, p):
            joint = mask[:, i] & mask[:, j]
            if joint.sum() < 2:
                raise InsufficientOverlap(
                    f"columns {i} and {j} share {int(joint.sum())} observed days (need >= 2)"
                )
            xi = values[joint, i]
            xj = values[joint, j]
            xi = xi - xi.mean()
            xj = xj - xj.mean()
            denom = np.sqrt((xi @ xi) * (xj @ xj))
            if denom == 0:
                raise ZeroVariance(f"columns {i} and {j} are constant on their joint days")
            corr[i, j] = corr[j, i] = (xi @ xj) / denom

    eigvals, eigvecs = np.linalg.eigh(corr)
    if np.any(eigvals < EIGENVALUE_FLOOR):
        eigvals = np.clip(eigvals, EIGENVALUE_FLOOR, None)
        corr = (eigvecs * eigvals) @ eigvecs.T
        d = np.sqrt(np.diag(corr))
        corr = corr / np.outer(d, d)
    corr = (corr + corr.T) / 2.0
    np.fill_diagonal(corr, 1.0)
    return corr


# ==== descriptives ====


def descriptives(dataset: TimeSeriesDataset) -> Descriptives:
    """Observed-value percentiles (type-7 interpolation) and IQR per variable.

    Covers the outcome, temperature, humidity and each pollutant.
    """
    variables = ["outcome", "temperature", "humidity", *dataset.pollutant_names]
    columns = [dataset.outcome, dataset.temperature, dataset.humidity] + [
        dataset.pollutants[dataset.mask[:, j], j] for j in range(dataset.n_pollutants)
    ]
    n_observed = np.array([col.size for col in columns])
    pct = np.vstack(
        [np.percentile(col, PERCENTILE_LEVELS, method="linear") for col in columns]
    )
    iqr = pct[:, 3] - pct[:, 1]
    return Descriptives(
        variables=tuple(variables), n_observed=n_observed, percentiles=pct, iqr=iqr
    )


def write_descriptives_csv(desc: Descriptives, path) -> None:
    desc.to_frame().to_csv(path, index=False)
