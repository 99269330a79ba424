"""Latent multi-pollutant exposure component.

Standardized concentrations Y follow a Gaussian measurement model around a
latent daily surface mu, which combines a meteorology regression with a
multivariate random-walk process theta shared across pollutants:

    Y[t, p] ~ Normal(mu[t, p], sigma_p^2)        (observed cells only)
    mu[t, p] = x_t' gamma_p + theta[t, p]
    theta[t] ~ MVN(rho * theta[t - lag], Sigma)  (t >= lag)
    theta[t] ~ MVN(0, Sigma)                     (t < lag)

The meteorology design x_t is (1, temp, temp^2, rhum, rhum^2) on the
standardized scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ScalingParams, standardize_series
from .errors import NonPositiveScale, SingularCovariance
from .rng import sample_normal

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PollutantParams:
    """Exposure-side parameter bundle.

    gamma : (P, k) meteorology coefficients (k = 5 with intercept), or None
        when the regression part is switched off (mu == theta).
    theta : (T, P) latent random-walk values.
    sigma : (P,) measurement standard deviations (> 0).
    cov : (P, P) innovation covariance of the latent walk (SPD).
    """

    gamma: np.ndarray | None
    theta: np.ndarray
    sigma: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class PollutantPriors:
    """Exposure-side prior settings.

    coef_sd applies to every meteorology coefficient. The measurement sd has
    either a Uniform(0, sigma_upper) prior (default set) or, in the
    sensitivity set, an InverseGamma(var_shape, var_rate) prior on the
    variance. The innovation covariance prior is inverse-Wishart with the
    given dof and scale.
    """

    coef_sd: float
    sigma_upper: float
    iw_dof: float
    iw_scale: np.ndarray
    variance_ig: tuple[float, float] | None = None


def default_pollutant_priors(
    empirical_corr: np.ndarray, prior_set: str = "default"
) -> PollutantPriors:
    """Priors pinned to the model definition: see module docstring.

    The inverse-Wishart uses dof = P and scale = dof * empirical correlation.
    """
    p = np.asarray(empirical_corr).shape[0]
    dof = float(p)
    scale = dof * np.asarray(empirical_corr, dtype=float)
    if prior_set == "default":
        return PollutantPriors(
            coef_sd=float(np.sqrt(1.0e3)), sigma_upper=100.0, iw_dof=dof, iw_scale=scale
        )
    if prior_set == "sensitivity":
        return PollutantPriors(
            coef_sd=1.0e3,
            sigma_upper=np.inf,
            iw_dof=dof,
            iw_scale=scale,
            variance_ig=(1.0, 0.001),
        )
    raise ValueError(f"unknown prior set {prior_set!r}")


def meteorology_design(temperature: np.ndarray, humidity: np.ndarray) -> np.ndarray:
    """Standardized (1, temp, temp^2, rhum, rhum^2) design matrix."""
    temp_s, _, _ = standardize_series(temperature, "temperature")
    rhum_s, _, _ = standardize_series(humidity, "humidity")
    return np.column_stack(
        [np.ones_like(temp_s), temp_s, temp_s**2, rhum_s, rhum_s**2]
    )


def pollutant_mean(params: PollutantParams, covariates: np.ndarray | None) -> np.ndarray:
    """Latent mean surface mu = covariates @ gamma' + theta, shape (T, P)."""
    if params.gamma is None or covariates is None:
        return np.array(params.theta, copy=True)
    return covariates @ np.asarray(params.gamma).T + params.theta


def measurement_loglik(
    values: np.ndarray,
    mask: np.ndarray,
    mu: np.ndarray,
    sigma: np.ndarray,
) -> float:
    """Gaussian log likelihood summed over observed cells; missing cells add 0.

    Raises
    ------
    NonPositiveScale
        If any measurement sd is not strictly positive.
    """
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        raise NonPositiveScale("measurement sd must be positive and finite")
    resid = np.where(mask, np.nan_to_num(values - mu), 0.0)
    per_cell = -0.5 * LOG_2PI - np.log(sigma)[None, :] - 0.5 * (resid / sigma[None, :]) ** 2
    return float(np.where(mask, per_cell, 0.0).sum())


def latent_transition_logdensity(
    theta_t: np.ndarray,
    theta_prev: np.ndarray,
    cov: np.ndarray,
    rho: float = 1.0,
) -> float:
    """Log MVN density of theta_t around rho * theta_prev with covariance cov.

    Raises
    ------
    SingularCovariance
        If cov is singular or not positive definite.
    """
    diff = np.atleast_1d(np.asarray(theta_t, dtype=float)) - rho * np.atleast_1d(
        np.asarray(theta_prev, dtype=float)
    )
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularCovariance("innovation covariance is singular")
    try:
        solved = np.linalg.solve(cov, diff)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("innovation covariance is singular") from exc
    p = diff.size
    return float(-0.5 * (p * LOG_2PI + logdet + diff @ solved))


def back_transform(mu_std: np.ndarray, scaling: ScalingParams) -> np.ndarray:
    """Map a standardized latent surface back to original concentration units."""
    return mu_std * scaling.sds + scaling.means


def impute_missing(
    mu: np.ndarray,
    sigma: np.ndarray,
    mask: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Predictive draws Normal(mu, sigma_p) for the missing cells.

    Returns a flat vector ordered like ``np.argwhere(~mask)`` rows.
    """
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    if np.any(sigma <= 0):
        raise NonPositiveScale("measurement sd must be positive")
    rows, cols = np.nonzero(~mask)
    if rows.size == 0:
        return np.empty(0)
    return sample_normal(mu[rows, cols], sigma[cols], rng)
