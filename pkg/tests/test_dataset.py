from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from h2m.dataset import (
    Descriptives,
    PollutantScaler,
    descriptives,
    empirical_correlation,
    load_dataset,
    standardize,
    write_descriptives_csv,
)
from h2m.errors import (
    EmptyPollutantColumn,
    InsufficientOverlap,
    MissingColumn,
    MissingOutcome,
    NonContiguousDates,
    ZeroVariance,
)

from .helpers import basic_frame, daily_dates, synthetic_dataset, write_csv


# ==== loading ====


def test_load_roundtrip(tmp_path):
    frame = basic_frame(8)
    frame["no2"] = frame["no2"].astype(object)
    frame.loc[3, "no2"] = ""  # empty cell -> missing
    frame.loc[5, "no2"] = "NA"  # literal NA -> missing
    path = write_csv(tmp_path / "data.csv", frame)
    ds = load_dataset(path, ["no2"])
    assert ds.n_days == 8
    assert ds.n_pollutants == 1
    assert not ds.mask[3, 0] and not ds.mask[5, 0]
    assert ds.mask.sum() == 6
    assert np.isnan(ds.pollutants[3, 0])
    assert ds.outcome[0] == 30


def test_load_missing_column(tmp_path):
    frame = basic_frame().drop(columns=["temp"])
    path = write_csv(tmp_path / "d.csv", frame)
    with pytest.raises(MissingColumn):
        load_dataset(path, ["no2"])
    with pytest.raises(MissingColumn):
        load_dataset(write_csv(tmp_path / "e.csv", basic_frame()), ["ozone"])
    with pytest.raises(MissingColumn):
        load_dataset(write_csv(tmp_path / "f.csv", basic_frame()), [])


def test_load_noncontiguous_dates(tmp_path):
    frame = basic_frame()
    frame.loc[2, "date"] = "2011-01-09"  # gap
    with pytest.raises(NonContiguousDates):
        load_dataset(write_csv(tmp_path / "d.csv", frame), ["no2"])
    frame = basic_frame()
    frame.loc[2, "date"] = frame.loc[1, "date"]  # duplicate
    with pytest.raises(NonContiguousDates):
        load_dataset(write_csv(tmp_path / "e.csv", frame), ["no2"])
    frame = basic_frame()
    frame.loc[2, "date"] = "not-a-date"
    with pytest.raises(NonContiguousDates):
        load_dataset(write_csv(tmp_path / "f.csv", frame), ["no2"])


def test_load_missing_outcome_and_meteorology(tmp_path):
    for column in ["outcome", "temp", "rhum", "holiday"]:
        frame = basic_frame()
        frame[column] = frame[column].astype(object)
        frame.loc[1, column] = ""
        with pytest.raises(MissingOutcome):
            load_dataset(write_csv(tmp_path / f"{column}.csv", frame), ["no2"])
    frame = basic_frame()
    frame["outcome"] = frame["outcome"].astype(object)
    frame.loc[1, "outcome"] = "many"
    with pytest.raises(MissingOutcome):
        load_dataset(write_csv(tmp_path / "bad.csv", frame), ["no2"])


def test_load_empty_pollutant_column(tmp_path):
    frame = basic_frame()
    frame["no2"] = frame["no2"].astype(object)
    frame["no2"] = ""
    with pytest.raises(EmptyPollutantColumn):
        load_dataset(write_csv(tmp_path / "d.csv", frame), ["no2"])
    # a single data row cannot satisfy the >= 2 observed-values rule
    with pytest.raises(EmptyPollutantColumn):
        load_dataset(write_csv(tmp_path / "one.csv", basic_frame(1)), ["no2"])


def test_load_125_partially_missing_days(tmp_path):
    rng = np.random.default_rng(42)
    n = 731
    names = ["co", "no2", "o3", "so2", "pm25", "pcnt"]
    frame = pd.DataFrame({"date": daily_dates(n).astype(str)})
    frame["outcome"] = rng.poisson(37, n)
    frame["temp"] = np.round(rng.normal(11.7, 5.0, n), 1)
    frame["rhum"] = np.round(rng.normal(78.0, 10.0, n), 1)
    frame["holiday"] = (pd.to_datetime(frame["date"]).dt.weekday >= 5).astype(int)
    for name in names:
        frame[name] = np.round(rng.gamma(4.0, 8.0, n), 1)
    for name in names:
        frame[name] = frame[name].astype(object)
    days_with_gap = rng.choice(n, size=125, replace=False)
    for day in days_with_gap:
        for j in rng.choice(len(names), size=rng.integers(1, 3), replace=False):
            frame.loc[day, names[j]] = ""
    path = write_csv(tmp_path / "two_years.csv", frame)
    ds = load_dataset(path, names)
    assert ds.n_days == 731
    assert int((~ds.mask).any(axis=1).sum()) == 125


# ==== standardization ====


def test_standardize_worked_example():
    ds = synthetic_dataset(n_days=4, n_pollutants=1, seed=1)
    pollutants = np.array([[0.0], [10.0], [np.nan], [20.0]])
    ds = type(ds)(
        dates=ds.dates,
        outcome=ds.outcome,
        temperature=ds.temperature,
        humidity=ds.humidity,
        holiday=ds.holiday,
        pollutants=pollutants,
        pollutant_names=("x",),
    )
    scaled, params = standardize(ds)
    assert params.means[0] == pytest.approx(10.0)
    assert params.sds[0] == pytest.approx(10.0)
    assert scaled[0, 0] == pytest.approx(-1.0)
    assert scaled[1, 0] == pytest.approx(0.0)
    assert np.isnan(scaled[2, 0])
    assert scaled[3, 0] == pytest.approx(1.0)


def test_standardize_moments_and_roundtrip():
    ds = synthetic_dataset(n_days=200, n_pollutants=3, seed=3, missing_rate=0.15)
    scaled, params = standardize(ds)
    for j in range(3):
        obs = scaled[ds.mask[:, j], j]
        assert obs.mean() == pytest.approx(0.0, abs=1e-12)
        assert obs.std(ddof=1) == pytest.approx(1.0, abs=1e-12)
    back = scaled * params.sds + params.means
    assert np.allclose(back[ds.mask], ds.pollutants[ds.mask], atol=1e-12)


def test_standardize_zero_variance():
    ds = synthetic_dataset(n_days=5, n_pollutants=1, seed=4)
    constant = np.full((5, 1), 7.0)
    ds = type(ds)(
        dates=ds.dates,
        outcome=ds.outcome,
        temperature=ds.temperature,
        humidity=ds.humidity,
        holiday=ds.holiday,
        pollutants=constant,
        pollutant_names=("x",),
    )
    with pytest.raises(ZeroVariance):
        standardize(ds)


def test_pollutant_scaler_transformer():
    rng = np.random.default_rng(11)
    x = rng.normal(50, 9, (60, 2))
    x[rng.random(x.shape) < 0.2] = np.nan
    scaler = PollutantScaler().fit(x)
    z = scaler.transform(x)
    mask = np.isfinite(x)
    assert abs(np.nanmean(z[:, 0])) < 1e-12
    assert np.allclose(scaler.inverse_transform(z)[mask], x[mask], atol=1e-12)
    params = scaler.get_params()
    assert isinstance(params, dict)


# ==== correlation ====


def test_correlation_properties_under_missingness():
    ds = synthetic_dataset(n_days=400, n_pollutants=4, seed=5, missing_rate=0.2)
    scaled, _ = standardize(ds)
    corr = empirical_correlation(scaled)
    assert np.allclose(corr, corr.T)
    assert np.all(np.diag(corr) == 1.0)
    assert np.all(np.linalg.eigvalsh(corr) > 0)
    assert np.all(np.abs(corr) <= 1.0 + 1e-12)


def test_correlation_matches_numpy_when_complete():
    ds = synthetic_dataset(n_days=300, n_pollutants=3, seed=6)
    scaled, _ = standardize(ds)
    corr = empirical_correlation(scaled)
    assert np.allclose(corr, np.corrcoef(scaled.T), atol=1e-10)


def test_correlation_insufficient_overlap():
    x = np.full((6, 2), np.nan)
    x[:3, 0] = [1.0, 2.0, 3.0]
    x[3:, 1] = [4.0, 5.0, 6.0]  # disjoint observation windows
    with pytest.raises(InsufficientOverlap):
        empirical_correlation(x)


def test_correlation_projection_repairs_indefinite_matrix():
    # Pairwise estimates from different day subsets can be jointly impossible;
    # build three series whose pairwise correlations are near +1/+1/-1.
    n = 90
    t = np.linspace(0, 1, n)
    a = np.full(n, np.nan)
    b = np.full(n, np.nan)
    c = np.full(n, np.nan)
    a[:60] = t[:60]
    b[:30] = t[:30]
    b[60:] = t[60:]
    c[30:60] = t[30:60]
    c[60:] = -t[60:]
    corr = empirical_correlation(np.column_stack([a, b, c]))
    assert np.all(np.linalg.eigvalsh(corr) > 0)
    assert np.all(np.diag(corr) == 1.0)


# ==== descriptives ====


def test_percentiles_use_linear_interpolation():
    ds = synthetic_dataset(n_days=100, n_pollutants=1, seed=7)
    values = np.arange(1.0, 101.0)
    ds = type(ds)(
        dates=ds.dates,
        outcome=ds.outcome,
        temperature=ds.temperature,
        humidity=ds.humidity,
        holiday=ds.holiday,
        pollutants=values.reshape(-1, 1),
        pollutant_names=("x",),
    )
    desc = descriptives(ds)
    row = desc.row("x")
    assert row["p25"] == pytest.approx(25.75)
    assert row["p75"] == pytest.approx(75.25)
    assert row["iqr"] == pytest.approx(49.5)
    assert row["n_observed"] == 100


def _piecewise_quantile_sample(n: int, pins: list[tuple[float, float]]) -> np.ndarray:
    probs = np.array([p for p, _ in pins])
    values = np.array([v for _, v in pins])
    u = np.linspace(0.0, 1.0, n)
    return np.interp(u, probs, values)


def test_urban_no2_style_fixture_iqr():
    # 706 observed days whose quartiles sit at 23.24 and 46.86.
    pins = [
        (0.0, 9.0),
        (0.10, 18.2),
        (0.25, 23.24),
        (0.50, 33.3),
        (0.75, 46.86),
        (0.90, 57.9),
        (1.0, 75.0),
    ]
    values = _piecewise_quantile_sample(706, pins)
    ds = synthetic_dataset(n_days=731, n_pollutants=1, seed=8)
    column = np.full((731, 1), np.nan)
    column[:706, 0] = values
    ds = type(ds)(
        dates=ds.dates,
        outcome=ds.outcome,
        temperature=ds.temperature,
        humidity=ds.humidity,
        holiday=ds.holiday,
        pollutants=column,
        pollutant_names=("no2",),
    )
    row = descriptives(ds).row("no2")
    assert row["n_observed"] == 706
    assert row["iqr"] == pytest.approx(23.6, abs=0.1)
    assert row["p50"] == pytest.approx(33.3, abs=0.1)


def test_descriptives_cover_all_variables_and_export(tmp_path):
    ds = synthetic_dataset(n_days=120, n_pollutants=2, seed=9, missing_rate=0.1)
    desc = descriptives(ds)
    assert desc.variables == ("outcome", "temperature", "humidity", "p1", "p2")
    assert isinstance(desc, Descriptives)
    assert np.all(desc.iqr >= 0)
    out = tmp_path / "descriptives.csv"
    write_descriptives_csv(desc, out)
    frame = pd.read_csv(out)
    assert list(frame["variable"]) == list(desc.variables)
    assert {"p10", "p25", "p50", "p75", "p90", "iqr"} <= set(frame.columns)


def test_expected_count_style_mean():
    ds = synthetic_dataset(n_days=60, n_pollutants=1, seed=10)
    assert descriptives(ds).row("outcome")["n_observed"] == 60
