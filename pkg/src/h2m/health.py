"""Poisson health-outcome component.

Daily counts O_t are Poisson with rate lambda_t * E, where E is the mean
daily count over the series and

    log lambda_t = beta_0 + sum_p beta_p * mu[t - lag, p]
                 + sum_i smooth_i(z_ti) + delta * holiday_t + eps_t

with exposures mu in original concentration units, thin-plate smooths of
time/temperature/humidity, a holiday contrast (workday = 0) and a daily
Gaussian overdispersion term eps_t ~ Normal(0, sigma_eps^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import LagUnavailable, NonPositiveRate
from .splines import SplineBasis, smooth_eval


@dataclass
class HealthParams:
    """Health-side parameter bundle (effects on original exposure units)."""

    beta0: float
    beta: np.ndarray  # (P,) pollutant effects per original unit
    alphas: np.ndarray  # (n_smooths,) linear smooth coefficients
    spline_coefs: list[np.ndarray]  # cubic coefficients per smooth
    delta: float  # holiday contrast
    eps: np.ndarray  # per-day overdispersion (aligned with modeled days)
    sigma_eps: float


@dataclass(frozen=True)
class HealthPriors:
    """Health-side prior settings.

    effect_sd is the informative prior sd on pollutant effects PER
    STANDARDIZED UNIT of exposure; coefficients on original units get sd
    effect_sd / sd_p. coef_sd covers the intercept, holiday contrast and
    smooth linear terms. spline_precision is the Gamma(shape, rate) prior on
    each smooth's cubic-coefficient precision. sigma_eps has Uniform(0,
    sigma_upper) by default or InverseGamma(variance_ig) on the variance in
    the sensitivity set.
    """

    coef_sd: float
    effect_sd: float
    sigma_upper: float
    spline_precision: tuple[float, float]
    variance_ig: tuple[float, float] | None = None


def default_health_priors(
    prior_set: str = "default", effect_sd: float = 0.1
) -> HealthPriors:
    if prior_set == "default":
        return HealthPriors(
            coef_sd=float(np.sqrt(1.0e3)),
            effect_sd=float(effect_sd),
            sigma_upper=100.0,
            spline_precision=(1.0, 0.001),
        )
    if prior_set == "sensitivity":
        return HealthPriors(
            coef_sd=1.0e3,
            effect_sd=1.0e3,
            sigma_upper=np.inf,
            spline_precision=(0.001, 0.001),
            variance_ig=(1.0, 0.001),
        )
    raise ValueError(f"unknown prior set {prior_set!r}")


@dataclass(frozen=True)
class ExpectedCount:
    """Fixed offset: the mean daily count over the modeled series."""

    value: float


def expected_count(outcome: np.ndarray) -> ExpectedCount:
    """Mean daily count, e.g. [28, 47] -> 37.5."""
    outcome = np.asarray(outcome, dtype=float)
    if outcome.size == 0 or np.any(outcome < 0):
        raise NonPositiveRate("outcome must be a non-empty non-negative count series")
    return ExpectedCount(float(outcome.mean()))


def linear_predictor(
    params: HealthParams,
    mu_original: np.ndarray,
    bases: list[SplineBasis],
    holiday: np.ndarray,
    lag: int = 1,
) -> np.ndarray:
    """log lambda_t for the modeled days t = lag..T-1.

    ``mu_original`` is the full (T, P) exposure surface in original units;
    spline bases must have one row per modeled day (days lag..T-1), as must
    ``params.eps``; ``holiday`` is full length T.

    Raises
    ------
    LagUnavailable
        If no day has a lagged exposure (lag >= T).
    """
    mu_original = np.atleast_2d(np.asarray(mu_original, dtype=float))
    t = mu_original.shape[0]
    if lag < 1 or lag >= t:
        raise LagUnavailable(f"lag {lag} leaves no modeled day in a series of {t}")
    eta = np.full(t - lag, float(params.beta0))
    eta += mu_original[:-lag] @ np.asarray(params.beta, dtype=float)
    for alpha, coefs, sbasis in zip(params.alphas, params.spline_coefs, bases):
        eta += smooth_eval(sbasis, alpha, coefs)
    eta += params.delta * np.asarray(holiday, dtype=float)[lag:]
    eta += np.asarray(params.eps, dtype=float)
    return eta


def health_loglik(outcome: np.ndarray, log_rate: np.ndarray, expected: ExpectedCount) -> float:
    """Poisson log likelihood sum_t [O log(lambda E) - lambda E - log O!].

    ``log_rate`` holds log lambda_t for the modeled days.

    Raises
    ------
    NonPositiveRate
        If E is not positive or any rate underflows to zero where O > 0.
    """
    outcome = np.asarray(outcome, dtype=float)
    log_rate = np.asarray(log_rate, dtype=float)
    if expected.value <= 0:
        raise NonPositiveRate("expected count must be positive")
    mean = np.exp(log_rate) * expected.value
    if np.any((mean <= 0) & (outcome > 0)):
        raise NonPositiveRate("zero rate with positive observed count")
    return float(
        np.sum(outcome * (log_rate + np.log(expected.value)) - mean - gammaln(outcome + 1.0))
    )


def percent_increase(beta, iqr: float):
    """Percent change in rate per IQR increase: (exp(beta * IQR) - 1) * 100.

    Accepts a scalar or an array of posterior draws.
    """
    return (np.exp(np.asarray(beta, dtype=float) * float(iqr)) - 1.0) * 100.0
