"""Estimator-style facade over the sampler, scikit-learn conventions.

`PollutionHealthModel` exposes the fit/predict/get_params surface so the
model slots into tooling that expects estimators. Prediction is in-sample:
the latent-exposure random walk gives fitted daily rates for the observed
window, not forecasts.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .dataset import TimeSeriesDataset, descriptives
from .diagnostics import dic_from_chains, summarize
from .health import expected_count
from .mcmc import ModelConfig, health_day_index, run_model


class PollutionHealthModel(BaseEstimator):
    """Bayesian exposure/health model with a scikit-learn shaped API.

    Parameters mirror :class:`~h2m.mcmc.ModelConfig`; see that class for
    semantics. ``fit`` expects a :class:`~h2m.dataset.TimeSeriesDataset`
    (counts are part of the dataset, so ``y`` is unused).
    """

    def __init__(
        self,
        variant: str = "H2Mjoint",
        lag: int = 1,
        knots_time: int = 6,
        knots_temperature: int = 3,
        knots_humidity: int = 3,
        prior_set: str = "default",
        pollutant_effect_sd: float = 0.1,
        burn_in: int = 50_000,
        retained: int = 10_000,
        thinning: int = 1,
        chains: int = 2,
        seed: int = 20_110_101,
        theta_block_days: int = 10,
        theta_proposal: str = "conditional",
        include_covariates: bool = True,
        include_smooths: bool = True,
        include_holiday: bool = True,
        include_overdispersion: bool = True,
        jobs: int = 1,
    ):
        self.variant = variant
        self.lag = lag
        self.knots_time = knots_time
        self.knots_temperature = knots_temperature
        self.knots_humidity = knots_humidity
        self.prior_set = prior_set
        self.pollutant_effect_sd = pollutant_effect_sd
        self.burn_in = burn_in
        self.retained = retained
        self.thinning = thinning
        self.chains = chains
        self.seed = seed
        self.theta_block_days = theta_block_days
        self.theta_proposal = theta_proposal
        self.include_covariates = include_covariates
        self.include_smooths = include_smooths
        self.include_holiday = include_holiday
        self.include_overdispersion = include_overdispersion
        self.jobs = jobs

    def _config(self) -> ModelConfig:
        return ModelConfig(**self.get_params())

    def fit(self, X: TimeSeriesDataset, y=None):
        if not isinstance(X, TimeSeriesDataset):
            raise TypeError("X must be a TimeSeriesDataset")
        config = self._config()
        self.chains_ = run_model(config, X)
        desc = descriptives(X)
        iqrs = {name: desc.row(name)["iqr"] for name in X.pollutant_names}
        self.summary_ = summarize(self.chains_, iqrs=iqrs)
        idx = health_day_index(config, X)
        self.day_index_ = config.lag + idx
        self.expected_ = expected_count(X.outcome).value
        self.dic_ = dic_from_chains(self.chains_, X.outcome[self.day_index_], self.expected_)
        self.eta_mean_ = np.mean([c.eta_mean for c in self.chains_], axis=0)
        return self

    def predict(self, X=None) -> np.ndarray:
        """Posterior-mean fitted daily counts for the training window.

        ``X`` must be None or the training dataset: the latent exposures are
        tied to the fitted days, so there is no out-of-sample path.
        """
        if not hasattr(self, "chains_"):
            raise AttributeError("fit the model before calling predict")
        if X is not None and not isinstance(X, TimeSeriesDataset):
            raise TypeError("X must be None or the training TimeSeriesDataset")
        return self.expected_ * np.exp(self.eta_mean_)

    def effects(self):
        """Summary rows for the pollutant effects (original units)."""
        frame = self.summary_.frame
        return frame[frame["parameter"].str.startswith("beta[")].reset_index(drop=True)
