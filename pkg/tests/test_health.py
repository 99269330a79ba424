from __future__ import annotations

import numpy as np
import pytest
from scipy.special import gammaln

from h2m.errors import LagUnavailable, NonPositiveRate
from h2m.health import (
    HealthParams,
    default_health_priors,
    expected_count,
    health_loglik,
    linear_predictor,
    percent_increase,
)
from h2m.splines import basis, make_knots


def _params(p=2, smooth_dims=(), eps_len=0, beta=None):
    return HealthParams(
        beta0=0.1,
        beta=np.zeros(p) if beta is None else np.asarray(beta, dtype=float),
        alphas=np.array([0.5] * len(smooth_dims)),
        spline_coefs=[np.linspace(-0.1, 0.1, k) for k in smooth_dims],
        delta=0.2,
        eps=np.zeros(eps_len),
        sigma_eps=0.1,
    )


def test_expected_count_is_mean():
    assert expected_count(np.array([28.0, 47.0])).value == pytest.approx(37.5)
    with pytest.raises(NonPositiveRate):
        expected_count(np.array([]))
    with pytest.raises(NonPositiveRate):
        expected_count(np.array([3.0, -1.0]))


def test_linear_predictor_assembles_all_terms():
    rng = np.random.default_rng(0)
    t, p, lag = 40, 2, 1
    mu = rng.normal(20.0, 4.0, (t, p))
    holiday = (rng.random(t) < 0.3).astype(float)
    z = rng.normal(size=t - lag)
    sb = basis(z, make_knots(z, 3))
    params = _params(p=p, smooth_dims=(3,), eps_len=t - lag, beta=[0.01, -0.02])
    params.eps = rng.normal(0, 0.05, t - lag)
    eta = linear_predictor(params, mu, [sb], holiday, lag=lag)
    assert eta.shape == (t - lag,)
    day = 7  # modeled day index; calendar day = lag + day
    expected = (
        params.beta0
        + mu[day] @ params.beta
        + 0.5 * sb.linear[day]
        + sb.cubic[day] @ params.spline_coefs[0]
        + params.delta * holiday[day + lag]
        + params.eps[day]
    )
    assert eta[day] == pytest.approx(expected, abs=1e-12)


def test_linear_predictor_requires_lagged_days():
    params = _params(p=1, eps_len=0)
    with pytest.raises(LagUnavailable):
        linear_predictor(params, np.zeros((3, 1)), [], np.zeros(3), lag=3)
    with pytest.raises(LagUnavailable):
        linear_predictor(params, np.zeros((3, 1)), [], np.zeros(3), lag=0)


def test_health_loglik_single_day_example():
    # O = 2 with lambda * E = 2: 2 log 2 - 2 - log 2! = log 2 - 2
    e = expected_count(np.array([2.0]))
    ll = health_loglik(np.array([2.0]), np.array([0.0]), e)
    assert ll == pytest.approx(np.log(2.0) - 2.0, abs=1e-12)


def test_health_loglik_matches_direct_formula():
    rng = np.random.default_rng(1)
    outcome = rng.poisson(30.0, 50).astype(float)
    log_rate = rng.normal(0, 0.2, 50)
    e = expected_count(outcome)
    direct = np.sum(
        outcome * np.log(np.exp(log_rate) * e.value)
        - np.exp(log_rate) * e.value
        - gammaln(outcome + 1)
    )
    assert health_loglik(outcome, log_rate, e) == pytest.approx(direct, abs=1e-9)


def test_health_loglik_rejects_zero_rate_with_counts():
    e = expected_count(np.array([5.0]))
    with pytest.raises(NonPositiveRate):
        health_loglik(np.array([5.0]), np.array([-1e6]), e)
    bad_e = expected_count(np.array([1.0]))
    object.__setattr__(bad_e, "value", 0.0)
    with pytest.raises(NonPositiveRate):
        health_loglik(np.array([0.0]), np.array([0.0]), bad_e)


def test_percent_increase_reference_values():
    assert round(float(percent_increase(np.log(1.0940) / 23.65, 23.65)), 2) == 9.40
    assert round(float(percent_increase(np.log(1.0346) / 26.85, 26.85)), 2) == 3.46


def test_percent_increase_monotone_and_vectorized():
    draws = np.linspace(-0.02, 0.02, 9)
    pct = percent_increase(draws, 10.0)
    assert pct.shape == draws.shape
    assert np.all(np.diff(pct) > 0)
    assert float(percent_increase(0.0, 12.0)) == 0.0


def test_prior_sets():
    default = default_health_priors()
    assert default.effect_sd == 0.1
    assert default.spline_precision == (1.0, 0.001)
    assert default.variance_ig is None
    sens = default_health_priors("sensitivity")
    assert sens.effect_sd == 1000.0
    assert sens.spline_precision == (0.001, 0.001)
    assert sens.variance_ig == (1.0, 0.001)
    custom = default_health_priors(effect_sd=0.5)
    assert custom.effect_sd == 0.5
