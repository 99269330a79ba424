from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone

from h2m.mcmc import ModelConfig, run_model
from h2m.model import PollutionHealthModel

from .helpers import synthetic_dataset

FAST = dict(
    burn_in=150,
    retained=100,
    chains=2,
    seed=8,
    include_smooths=False,
)


def test_params_roundtrip_and_clone():
    m = PollutionHealthModel(variant="ME", retained=500, seed=3)
    params = m.get_params()
    assert params["variant"] == "ME"
    assert params["retained"] == 500
    m2 = clone(m)
    assert m2.get_params() == params
    m.set_params(lag=2)
    assert m.lag == 2


def test_fit_predict_shapes():
    ds = synthetic_dataset(n_days=70, seed=2)
    m = PollutionHealthModel(variant="H2Mjoint", **FAST).fit(ds)
    rates = m.predict()
    assert rates.shape == (69,)  # one day lost to the lag
    assert np.all(rates > 0)
    # fitted level tracks the observed daily counts
    assert abs(rates.mean() - ds.outcome[1:].mean()) < 0.3 * ds.outcome.mean()
    effects = m.effects()
    assert list(effects["parameter"]) == ["beta[p1]", "beta[p2]"]
    assert np.isfinite(m.dic_.dic)


def test_predict_before_fit_raises():
    m = PollutionHealthModel()
    with pytest.raises(AttributeError, match="fit"):
        m.predict()
    with pytest.raises(TypeError, match="TimeSeriesDataset"):
        m.fit(np.zeros((5, 2)))


def test_matches_direct_run_model():
    ds = synthetic_dataset(n_days=60, seed=4)
    m = PollutionHealthModel(variant="ME", **FAST).fit(ds)
    direct = run_model(ModelConfig(variant="ME", **FAST), ds)
    wrapped = np.concatenate([c.draws["beta"] for c in m.chains_])
    expected = np.concatenate([c.draws["beta"] for c in direct])
    assert np.array_equal(wrapped, expected)
