"""Metropolis-within-Gibbs engine for the two-component model.

Three estimation variants share one engine:

``ME``
    Plug-in benchmark: the health model sees lagged observed concentrations
    directly; days whose lagged exposure row is incomplete are dropped.
``H2M``
    Two-stage cut: the exposure component is sampled first on its own stream
    (bitwise independent of the outcome), retained exposure draws are then
    cycled through the health chain, one draw per iteration.
``H2Mjoint``
    Fully joint sampler: latent-exposure updates see both the measurement
    and the health likelihood, so outcome information feeds back.

The latent process theta is updated in contiguous blocks of days jointly
across pollutants. The default proposal draws each block exactly from its
exposure-side Gaussian full conditional (given the neighbouring days) and,
in the joint variant, corrects by the health-likelihood ratio; a plain
Gaussian random-walk proposal is available as ``theta_proposal="rw"``.
Internally the health regression works on standardized exposures; pollutant
effects are reported per original concentration unit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import gammaln

from . import health as health_mod
from . import pollutant as pollutant_mod
from .dataset import ScalingParams, TimeSeriesDataset, empirical_correlation, standardize
from .errors import (
    ConfigError,
    NonFiniteCurrentTarget,
    NonFiniteLogPosterior,
    NotPositiveDefinite,
    RankDeficient,
    SingularScale,
)
from .rng import SeedTree, sample_gamma, sample_inverse_wishart, sample_normal
from .splines import basis, make_knots, time_covariate

VARIANTS = ("ME", "H2M", "H2Mjoint")

# Support floor for sd parameters sampled on the log scale: keeps precisions
# finite when the data drive a measurement sd towards zero.
SIGMA_FLOOR = 1.0e-4

_SCALAR_TARGET = 0.44
_VECTOR_TARGET = 0.234


# ==== configuration and results ====


@dataclass
class ModelConfig:
    """Everything needed to reproduce one model fit (besides the data)."""

    variant: str = "H2Mjoint"
    lag: int = 1
    knots_time: int = 6
    knots_temperature: int = 3
    knots_humidity: int = 3
    prior_set: str = "default"
    pollutant_effect_sd: float = 0.1  # prior sd per standardized exposure unit
    burn_in: int = 50_000
    retained: int = 10_000
    thinning: int = 1
    chains: int = 2
    seed: int = 20_110_101
    adapt_window: int = 50
    theta_block_days: int = 10
    theta_proposal: str = "conditional"
    rho: float = 1.0
    include_covariates: bool = True
    include_smooths: bool = True
    include_holiday: bool = True
    include_overdispersion: bool = True
    store_mu: bool = False
    store_imputed: bool = True
    jobs: int = 1
    fixed: dict | None = None  # testing hook: pins named blocks, skips their updates

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lag < 1:
            raise ConfigError("lag must be a positive integer")
        if self.burn_in < 0 or self.retained < 1:
            raise ConfigError("burn_in must be >= 0 and retained >= 1")
        if self.thinning < 1 or self.retained % self.thinning != 0:
            raise ConfigError("thinning must be >= 1 and divide retained")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if self.adapt_window < 2:
            raise ConfigError("adapt_window must be >= 2")
        if self.theta_block_days < 1:
            raise ConfigError("theta_block_days must be >= 1")
        if self.theta_proposal not in ("conditional", "rw"):
            raise ConfigError("theta_proposal must be 'conditional' or 'rw'")
        if not 0.0 < self.rho <= 1.0:
            raise ConfigError("rho must be in (0, 1]")
        if self.prior_set not in ("default", "sensitivity"):
            raise ConfigError("prior_set must be 'default' or 'sensitivity'")
        if self.pollutant_effect_sd <= 0:
            raise ConfigError("pollutant_effect_sd must be positive")
        if min(self.knots_time, self.knots_temperature, self.knots_humidity) < 1:
            raise ConfigError("knot counts must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.fixed is not None:
            allowed = {"sigma", "Sigma", "gamma", "beta", "beta0"}
            unknown = set(self.fixed) - allowed
            if unknown:
                raise ConfigError(f"unknown fixed blocks: {sorted(unknown)}")

    @property
    def n_draws(self) -> int:
        return self.retained // self.thinning


@dataclass
class ChainDraws:
    """Retained draws and bookkeeping for one chain."""

    variant: str
    pollutant_names: tuple[str, ...]
    n_days: int
    lag: int
    draws: dict[str, np.ndarray]
    acceptance: dict[str, float]
    scales: dict[str, float]
    mu_mean: np.ndarray | None = None
    mu_sd: np.ndarray | None = None
    eta_mean: np.ndarray | None = None
    missing_index: np.ndarray | None = None
    seed_path: tuple = ()
    elapsed_seconds: float = 0.0

    @property
    def n_draws(self) -> int:
        return next(iter(self.draws.values())).shape[0] if self.draws else 0


# ==== reusable sampler operations ====


def update_covariance(
    increments_outer: np.ndarray,
    n_increments: int,
    prior_scale: np.ndarray,
    prior_dof: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Conjugate inverse-Wishart draw IW(prior_scale + S, prior_dof + n).

    ``increments_outer`` is the summed outer product S of the latent
    increments; boundary days (prior mean zero) count as increments from 0.

    Raises
    ------
    SingularScale
        If the posterior scale matrix is not positive definite.
    """
    scale = np.asarray(prior_scale, dtype=float) + np.asarray(increments_outer, dtype=float)
    try:
        return sample_inverse_wishart(scale, float(prior_dof) + float(n_increments), rng)
    except NotPositiveDefinite as exc:
        raise SingularScale("posterior inverse-Wishart scale is singular") from exc


def update_gaussian_block(
    design: np.ndarray,
    response: np.ndarray,
    noise_variance: float,
    prior_precision: np.ndarray | float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Exact draw from the conjugate Gaussian full conditional of a
    coefficient block: N((X'X/s2 + P0)^-1 X'y/s2, (X'X/s2 + P0)^-1).

    Raises
    ------
    RankDeficient
        If the posterior precision is singular (flat prior, deficient X).
    """
    design = np.atleast_2d(np.asarray(design, dtype=float))
    response = np.asarray(response, dtype=float)
    k = design.shape[1]
    p0 = np.asarray(prior_precision, dtype=float)
    if p0.ndim == 0:
        p0 = float(p0) * np.eye(k)
    precision = design.T @ design / noise_variance + p0
    try:
        factor = cho_factor(precision, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient("posterior precision for the coefficient block is singular") from exc
    mean = cho_solve(factor, design.T @ response / noise_variance, check_finite=False)
    noise = solve_triangular(
        factor[0], rng.standard_normal(k), trans="T", lower=True, check_finite=False
    )
    return mean + noise


def mh_step(
    log_target: Callable[[np.ndarray], float],
    current: np.ndarray,
    scale: float,
    rng: np.random.Generator,
    chol: np.ndarray | None = None,
) -> tuple[np.ndarray, bool]:
    """One Gaussian random-walk Metropolis step.

    The proposal is ``current + scale * z`` (optionally premultiplied by a
    Cholesky factor). Proposals with non-finite target are always rejected.

    Raises
    ------
    NonFiniteCurrentTarget
        If the target is non-finite at the current point.
    """
    current = np.atleast_1d(np.asarray(current, dtype=float))
    lt_current = float(log_target(current))
    if not np.isfinite(lt_current):
        raise NonFiniteCurrentTarget("log target is non-finite at the current state")
    step = rng.standard_normal(current.size)
    if chol is not None:
        step = chol @ step
    proposal = current + scale * step
    lt_proposal = float(log_target(proposal))
    if not np.isfinite(lt_proposal):
        return current, False
    if np.log(rng.uniform()) < lt_proposal - lt_current:
        return proposal, True
    return current, False


def adapt_scale(
    acceptance_rate: float, scale: float, target: float = _SCALAR_TARGET, gain: float = 1.0
) -> float:
    """Robbins-Monro style multiplicative scale update toward the target rate."""
    new = scale * float(np.exp(gain * (acceptance_rate - target)))
    return float(np.clip(new, 1.0e-8, 1.0e6))


# ==== adaptation bookkeeping ====


class _BlockAdapter:
    """Tracks acceptance for one MH block; adapts scale during burn-in only."""

    def __init__(self, label: str, scale: float, target: float, dim: int = 1):
        self.label = label
        self.scale = scale
        self.target = target
        self.dim = dim
        self.round = 0
        self.win_accept = 0.0
        self.win_count = 0
        self.post_accept = 0.0
        self.post_count = 0
        self.buffer: list[np.ndarray] | None = [] if dim > 1 else None
        self.chol: np.ndarray | None = None
        self.frozen = False

    def record(self, accepted: float, during_burnin: bool, value: np.ndarray | None = None):
        if during_burnin:
            self.win_accept += accepted
            self.win_count += 1
            if self.buffer is not None and value is not None:
                self.buffer.append(np.array(value, copy=True))
                if len(self.buffer) > 600:
                    del self.buffer[:100]
        else:
            self.post_accept += accepted
            self.post_count += 1

    def adapt(self):
        if self.frozen or self.win_count == 0:
            return
        self.round += 1
        gain = min(0.5, 1.0 / np.sqrt(self.round))
        self.scale = adapt_scale(self.win_accept / self.win_count, self.scale, self.target, gain)
        self.win_accept = 0.0
        self.win_count = 0
        if self.buffer is not None and len(self.buffer) >= max(3 * self.dim, 40):
            draws = np.asarray(self.buffer[-400:])
            cov = np.cov(draws.T)
            cov += (1.0e-8 + 1.0e-6 * np.trace(cov) / self.dim) * np.eye(self.dim)
            try:
                self.chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                pass

    def freeze(self):
        self.frozen = True
        self.buffer = None

    @property
    def post_rate(self) -> float:
        return self.post_accept / self.post_count if self.post_count else float("nan")


# ==== shared preparation ====


@dataclass
class _Prepared:
    """Dataset-derived quantities shared by every chain of a run."""

    z: np.ndarray  # standardized pollutants with NaN at missing cells
    z0: np.ndarray  # same, missing filled with 0
    mask: np.ndarray
    scaling: ScalingParams
    corr: np.ndarray
    design_met: np.ndarray | None
    outcome: np.ndarray
    holiday: np.ndarray
    expected: float
    bases: list  # spline bases on modeled days
    smooth_labels: list[str]
    pollutant_priors: pollutant_mod.PollutantPriors
    health_priors: health_mod.HealthPriors
    missing_index: np.ndarray  # (n_missing, 2) row/col indices

    @property
    def n_days(self) -> int:
        return self.z.shape[0]

    @property
    def n_pollutants(self) -> int:
        return self.z.shape[1]


def _prepare(config: ModelConfig, dataset: TimeSeriesDataset) -> _Prepared:
    z, scaling = standardize(dataset)
    corr = empirical_correlation(z, dataset.mask)
    design_met = (
        pollutant_mod.meteorology_design(dataset.temperature, dataset.humidity)
        if config.include_covariates
        else None
    )
    t = dataset.n_days
    n_modeled = max(t - config.lag, 0)
    bases = []
    labels = []
    if config.include_smooths and n_modeled > 0:
        for label, values, k in (
            ("time", time_covariate(t)[config.lag :], config.knots_time),
            ("temperature", dataset.temperature[config.lag :], config.knots_temperature),
            ("humidity", dataset.humidity[config.lag :], config.knots_humidity),
        ):
            bases.append(basis(values, make_knots(values, k)))
            labels.append(label)
    return _Prepared(
        z=z,
        z0=np.nan_to_num(z, nan=0.0),
        mask=dataset.mask,
        scaling=scaling,
        corr=corr,
        design_met=design_met,
        outcome=np.asarray(dataset.outcome, dtype=float),
        holiday=np.asarray(dataset.holiday, dtype=float),
        expected=health_mod.expected_count(dataset.outcome).value,
        bases=bases,
        smooth_labels=labels,
        pollutant_priors=pollutant_mod.default_pollutant_priors(corr, config.prior_set),
        health_priors=health_mod.default_health_priors(
            config.prior_set, config.pollutant_effect_sd
        ),
        missing_index=np.argwhere(~dataset.mask),
    )


def health_day_index(config: ModelConfig, dataset: TimeSeriesDataset) -> np.ndarray:
    """Indices (into days lag..T-1) that enter the health likelihood.

    The plug-in variant drops modeled days whose lagged exposure row is
    incomplete; the latent variants keep every modeled day.
    """
    n_modeled = max(dataset.n_days - config.lag, 0)
    if config.variant == "ME":
        return np.flatnonzero(dataset.mask[:n_modeled].all(axis=1))
    return np.arange(n_modeled)


def _moving_average_split(resid: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3-day moving average of residuals (smooth part -> latent start values)."""
    filled = np.where(mask, resid, 0.0)
    kernel = np.ones(3)
    smooth = np.empty_like(filled)
    counts = np.empty_like(filled)
    for j in range(filled.shape[1]):
        smooth[:, j] = np.convolve(filled[:, j], kernel, mode="same")
        counts[:, j] = np.convolve(mask[:, j].astype(float), kernel, mode="same")
    theta0 = np.where(counts > 0, smooth / np.maximum(counts, 1.0), 0.0)
    rough = np.where(mask, resid - theta0, np.nan)
    sds = np.array(
        [
            max(float(np.nanstd(rough[:, j])), 0.05)
            for j in range(filled.shape[1])
        ]
    )
    return theta0, sds


# ==== the chain runner ====


class _ChainRunner:
    """Runs one chain in one of three modes: joint, exposure, health."""

    def __init__(
        self,
        config: ModelConfig,
        prep: _Prepared,
        mode: str,
        rng: np.random.Generator,
        exposure_feed: np.ndarray | None = None,
        cycle_feed: bool = False,
    ):
        self.cfg = config
        self.prep = prep
        self.mode = mode
        self.rng = rng
        self.exposure_feed = exposure_feed
        self.cycle_feed = cycle_feed
        self.fixed = config.fixed or {}
        self.t = prep.n_days
        self.p = prep.n_pollutants
        self.n_modeled = max(self.t - config.lag, 0)
        self._setup_health_side()
        if mode in ("joint", "exposure"):
            self._setup_exposure_side()
        self._setup_blocks()

    # ---- setup ----

    def _setup_health_side(self):
        cfg, prep = self.cfg, self.prep
        nm = self.n_modeled
        self.oh = prep.outcome[cfg.lag :]
        self.hol_h = prep.holiday[cfg.lag :]
        self.expected = prep.expected
        if self.mode == "health" and not self.cycle_feed and nm > 0:
            # plug-in exposures: drop modeled days with incomplete lagged rows
            valid = prep.mask[:nm].all(axis=1)
        else:
            valid = np.ones(nm, dtype=bool)
        self.v_idx = np.flatnonzero(valid)
        self.nv = int(self.v_idx.size)
        self.oh_v = self.oh[self.v_idx]
        self.hol_v = self.hol_h[self.v_idx]
        self.dev_const = float(
            np.sum(self.oh_v * np.log(self.expected) - gammaln(self.oh_v + 1.0))
        )
        self.smooth_designs = [b.design[self.v_idx] for b in prep.bases]
        hp = prep.health_priors
        self.beta_std = np.zeros(self.p)
        if "beta" in self.fixed:
            self.beta_std = np.asarray(self.fixed["beta"], dtype=float) * prep.scaling.sds
        self.beta0 = 0.0
        if self.nv:
            self.beta0 = float(np.log(max(self.oh_v.mean(), 0.5) / self.expected))
        if "beta0" in self.fixed:
            self.beta0 = float(self.fixed["beta0"])
        self.delta = 0.0
        self.smooth_coefs = [np.zeros(b.n_knots + 1) for b in prep.bases]
        self.taus = np.full(len(prep.bases), 100.0)
        self.eps = np.zeros(self.nv)
        self.sigma_eps = 0.1
        self.hp = hp
        self.use_delta = cfg.include_holiday
        self.use_eps = cfg.include_overdispersion

    def _setup_exposure_side(self):
        cfg, prep = self.cfg, self.prep
        pp = prep.pollutant_priors
        self.obs_idx = [np.flatnonzero(prep.mask[:, j]) for j in range(self.p)]
        if prep.design_met is not None:
            self.x_met = prep.design_met
            self.kg = self.x_met.shape[1]
            self.x_obs = [self.x_met[idx] for idx in self.obs_idx]
            self.gram = [x.T @ x for x in self.x_obs]
            self.gamma = np.zeros((self.p, self.kg))
            for j in range(self.p):
                obs = self.obs_idx[j]
                self.gamma[j] = np.linalg.lstsq(
                    self.x_obs[j], prep.z0[obs, j], rcond=None
                )[0]
            if "gamma" in self.fixed:
                self.gamma = np.asarray(self.fixed["gamma"], dtype=float).reshape(
                    self.p, self.kg
                )
            resid = prep.z0 - self.x_met @ self.gamma.T
        else:
            self.x_met = None
            self.gamma = None
            resid = prep.z0.copy()
        theta0, sds = _moving_average_split(resid, prep.mask)
        self.theta = theta0
        self.sigma = np.asarray(self.fixed.get("sigma", sds), dtype=float).copy()
        self.sigma_cov = np.asarray(self.fixed.get("Sigma", prep.corr), dtype=float).copy()
        self._refresh_sigma_inv()
        self.pp = pp
        self.mu = (
            self.theta.copy()
            if self.x_met is None
            else self.x_met @ self.gamma.T + self.theta
        )

    def _refresh_sigma_inv(self):
        factor = cho_factor(self.sigma_cov, lower=True, check_finite=False)
        self.sigma_inv = cho_solve(factor, np.eye(self.p), check_finite=False)

    def _setup_blocks(self):
        cfg = self.cfg
        if self.mode in ("joint", "exposure"):
            bd = cfg.theta_block_days
            self.blocks = [(a, min(a + bd, self.t) - 1) for a in range(0, self.t, bd)]
            self._block_static = [self._block_structure(a, e) for a, e in self.blocks]
            self._mask_keys = [
                self.prep.mask[a : e + 1].tobytes() for a, e in self.blocks
            ]
        # exposure feed for plug-in / cut health chains
        if self.mode == "health":
            if self.cycle_feed:
                self._set_exposure_rows(self.exposure_feed[0])
            else:
                self._set_exposure_rows(self.prep.z0[: self.n_modeled])
        else:
            # joint mode never drops health days, so the regression rows can
            # be a live view of mu and track latent updates for free
            self.x_expo_v = self.mu[: self.n_modeled]
        self._rebuild_eta()
        self._theta_acc = 0.0
        self._theta_cnt = 0
        # adapters
        hp_scale = 0.1
        self.adapters: dict[str, _BlockAdapter] = {}
        if self.mode in ("joint", "exposure"):
            if cfg.theta_proposal == "rw":
                for b in range(len(self.blocks)):
                    nb = self.blocks[b][1] - self.blocks[b][0] + 1
                    self.adapters[f"theta:{b}"] = _BlockAdapter(
                        f"theta:{b}", 0.1, _VECTOR_TARGET, dim=1
                    )
            if "sigma" not in self.fixed:
                for j in range(self.p):
                    self.adapters[f"log_sigma:{j}"] = _BlockAdapter(
                        f"log_sigma:{j}", 0.3, _SCALAR_TARGET
                    )
        if self.mode in ("joint", "health"):
            self.adapters["beta"] = _BlockAdapter(
                "beta", 0.05, _VECTOR_TARGET if self.p > 1 else _SCALAR_TARGET, dim=self.p
            )
            self.adapters["beta0"] = _BlockAdapter("beta0", hp_scale, _SCALAR_TARGET)
            if self.use_delta:
                self.adapters["delta"] = _BlockAdapter("delta", hp_scale, _SCALAR_TARGET)
            for label in self.prep.smooth_labels:
                # Newton-step proposals need no tuned scale; frozen keeps the
                # adapter as a plain acceptance counter
                adapter = _BlockAdapter(f"smooth_{label}", 1.0, _VECTOR_TARGET)
                adapter.freeze()
                self.adapters[f"smooth_{label}"] = adapter
            if self.use_eps and self.nv:
                self.adapters["eps"] = _BlockAdapter("eps", 0.5, _SCALAR_TARGET)
                self.adapters["log_sigma_eps"] = _BlockAdapter(
                    "log_sigma_eps", 0.3, _SCALAR_TARGET
                )

    def _block_structure(self, a: int, e: int):
        """Static pieces of a theta block: transition matrix and boundary maps."""
        cfg = self.cfg
        nb = e - a + 1
        tmat = np.zeros((nb, nb))
        left: list[tuple[int, int]] = []  # (row in block, day outside)
        right: list[tuple[int, int]] = []
        rho = cfg.rho
        for s in range(a, min(e, cfg.lag - 1) + 1):
            tmat[s - a, s - a] += 1.0  # boundary prior N(0, Sigma)
        lo = max(a, cfg.lag)
        hi = min(e + cfg.lag, self.t - 1)
        for s in range(lo, hi + 1):
            i = s - a
            j = s - cfg.lag - a
            in_i = a <= s <= e
            in_j = a <= s - cfg.lag <= e
            if in_i and in_j:
                tmat[i, i] += 1.0
                tmat[j, j] += rho * rho
                tmat[i, j] -= rho
                tmat[j, i] -= rho
            elif in_i:
                tmat[i, i] += 1.0
                left.append((i, s - cfg.lag))
            elif in_j:
                tmat[j, j] += rho * rho
                right.append((j, s))
        return tmat, left, right

    def _set_exposure_rows(self, rows: np.ndarray):
        self.x_expo_v = np.asarray(rows, dtype=float)[self.v_idx]

    def _rebuild_eta(self):
        self.c_expo = self.x_expo_v @ self.beta_std if self.nv else np.zeros(0)
        self.c_smooth = [d @ c for d, c in zip(self.smooth_designs, self.smooth_coefs)]
        self.eta_v = self.beta0 + self.c_expo + self.delta * self.hol_v + self.eps
        for part in self.c_smooth:
            self.eta_v = self.eta_v + part

    # ---- health likelihood helpers ----

    def _ll_eta(self, eta_v: np.ndarray) -> float:
        if self.nv == 0:
            return 0.0
        with np.errstate(over="ignore"):
            lam = np.exp(eta_v)
            return float(self.oh_v @ eta_v - self.expected * lam.sum())

    def _ll_delta_idx(self, idx: np.ndarray, delta_eta: np.ndarray) -> float:
        old = self.eta_v[idx]
        with np.errstate(over="ignore"):
            return float(
                self.oh_v[idx] @ delta_eta
                - self.expected * (np.exp(old + delta_eta) - np.exp(old)).sum()
            )

    # ---- exposure updates ----

    def _update_gamma(self, during_burnin: bool):
        if self.x_met is None or "gamma" in self.fixed:
            return
        joint = self.mode == "joint"
        p0 = np.eye(self.kg) / self.pp.coef_sd**2
        for j in range(self.p):
            obs = self.obs_idx[j]
            response = self.prep.z0[obs, j] - self.theta[obs, j]
            proposal = update_gaussian_block(
                self.x_obs[j], response, float(self.sigma[j] ** 2), p0, self.rng
            )
            if joint and self.nv and self.beta_std[j] != 0.0:
                delta_mu = self.x_met[: self.n_modeled] @ (proposal - self.gamma[j])
                delta_eta = self.beta_std[j] * delta_mu[self.v_idx]
                log_ratio = self._ll_delta_idx(self.v_idx, delta_eta)
                if np.log(self.rng.uniform()) >= log_ratio:
                    continue
                self.c_expo += delta_eta
                self.eta_v += delta_eta
            full_delta = self.x_met @ (proposal - self.gamma[j])
            self.gamma[j] = proposal
            self.mu[:, j] += full_delta

    def _theta_chol_cache_key(self, b: int) -> bytes:
        return self._block_static[b][0].tobytes() + self._mask_keys[b]

    def _update_theta(self, during_burnin: bool):
        cfg = self.cfg
        joint = self.mode == "joint"
        meas_prec = np.where(self.prep.mask, 1.0, 0.0) / (self.sigma**2)[None, :]
        zres = self.prep.z0 - (0.0 if self.x_met is None else self.x_met @ self.gamma.T)
        meas_r = meas_prec * zres
        chol_cache: dict[bytes, np.ndarray] = {}
        rho = cfg.rho
        for b, (a, e) in enumerate(self.blocks):
            tmat, left, right = self._block_static[b]
            nb = e - a + 1
            dim = nb * self.p
            r = meas_r[a : e + 1].copy()
            for row, day in left:
                r[row] += rho * (self.sigma_inv @ self.theta[day])
            for row, day in right:
                r[row] += rho * (self.sigma_inv @ self.theta[day])
            r_flat = r.ravel()
            if cfg.theta_proposal == "conditional":
                key = self._theta_chol_cache_key(b)
                lower = chol_cache.get(key)
                if lower is None:
                    q = np.kron(tmat, self.sigma_inv)
                    q[np.arange(dim), np.arange(dim)] += meas_prec[a : e + 1].ravel()
                    try:
                        lower = np.linalg.cholesky(q)
                    except np.linalg.LinAlgError as exc:
                        raise SingularScale(
                            f"latent-block conditional precision singular at days "
                            f"{a}..{e}"
                        ) from exc
                    chol_cache[key] = lower
                mean = cho_solve((lower, True), r_flat, check_finite=False)
                noise = solve_triangular(
                    lower, self.rng.standard_normal(dim), trans="T", lower=True,
                    check_finite=False,
                )
                proposal = (mean + noise).reshape(nb, self.p)
                if joint:
                    hi = min(e, self.n_modeled - 1)
                    if hi >= a:
                        idx = np.arange(a, hi + 1)
                        delta_eta = (proposal[: hi - a + 1] - self.theta[a : hi + 1]) @ self.beta_std
                        log_ratio = self._ll_delta_idx(idx, delta_eta)
                        accepted = np.log(self.rng.uniform()) < log_ratio
                        if not during_burnin:
                            self._theta_cnt += 1
                            self._theta_acc += float(accepted)
                        if not accepted:
                            continue
                        self.c_expo[idx] += delta_eta
                        self.eta_v[idx] += delta_eta
                self._apply_theta_block(a, e, proposal)
            else:
                adapter = self.adapters[f"theta:{b}"]
                step = adapter.scale * self.rng.standard_normal((nb, self.p))
                proposal = self.theta[a : e + 1] + step
                log_ratio = self._block_exposure_logpost(
                    a, e, proposal, tmat, left, right, meas_prec, zres
                ) - self._block_exposure_logpost(
                    a, e, self.theta[a : e + 1], tmat, left, right, meas_prec, zres
                )
                delta_eta = None
                idx = None
                if joint:
                    hi = min(e, self.n_modeled - 1)
                    if hi >= a:
                        idx = np.arange(a, hi + 1)
                        delta_eta = (proposal[: hi - a + 1] - self.theta[a : hi + 1]) @ self.beta_std
                        log_ratio += self._ll_delta_idx(idx, delta_eta)
                accepted = np.log(self.rng.uniform()) < log_ratio
                adapter.record(float(accepted), during_burnin)
                if accepted:
                    if delta_eta is not None:
                        self.c_expo[idx] += delta_eta
                        self.eta_v[idx] += delta_eta
                    self._apply_theta_block(a, e, proposal)

    def _apply_theta_block(self, a: int, e: int, proposal: np.ndarray):
        delta = proposal - self.theta[a : e + 1]
        self.theta[a : e + 1] = proposal
        self.mu[a : e + 1] += delta

    def _block_exposure_logpost(self, a, e, block, tmat, left, right, meas_prec, zres):
        resid = zres[a : e + 1] - block
        meas = -0.5 * float(np.sum(meas_prec[a : e + 1] * resid * resid))
        quad = float(np.einsum("ij,ik,jk->", tmat, block @ self.sigma_inv, block))
        lin = 0.0
        rho = self.cfg.rho
        for row, day in left:
            lin += rho * float(self.theta[day] @ self.sigma_inv @ block[row])
        for row, day in right:
            lin += rho * float(self.theta[day] @ self.sigma_inv @ block[row])
        return meas - 0.5 * quad + lin

    def _log_prior_sd(self, sd: float, upper: float, ig: tuple[float, float] | None) -> float:
        """Prior density for an sd parameter in log-sd coordinates."""
        if sd < SIGMA_FLOOR or sd >= upper:
            return -np.inf
        if ig is None:
            return float(np.log(sd))  # uniform on sd, Jacobian sd
        a, b = ig
        return float(-2.0 * a * np.log(sd) - b / sd**2)

    def _update_sigma(self, during_burnin: bool):
        if "sigma" in self.fixed:
            return
        resid = self.prep.z0 - self.mu
        ssr = np.sum(np.where(self.prep.mask, resid * resid, 0.0), axis=0)
        n_obs = self.prep.mask.sum(axis=0)
        pp = self.pp
        for j in range(self.p):
            adapter = self.adapters[f"log_sigma:{j}"]

            def target(log_sd: np.ndarray, j=j) -> float:
                sd = float(np.exp(log_sd[0]))
                prior = self._log_prior_sd(sd, pp.sigma_upper, pp.variance_ig)
                if not np.isfinite(prior):
                    return -np.inf
                return float(-n_obs[j] * np.log(sd) - 0.5 * ssr[j] / sd**2 + prior)

            new, accepted = mh_step(
                target, np.array([np.log(self.sigma[j])]), adapter.scale, self.rng
            )
            adapter.record(float(accepted), during_burnin)
            if accepted:
                self.sigma[j] = float(np.exp(new[0]))

    def _update_sigma_cov(self):
        if "Sigma" in self.fixed:
            return
        cfg = self.cfg
        lag, rho = cfg.lag, cfg.rho
        boundary = self.theta[:lag]
        increments = self.theta[lag:] - rho * self.theta[:-lag]
        s = boundary.T @ boundary + increments.T @ increments
        self.sigma_cov = update_covariance(
            s, self.t, self.pp.iw_scale, self.pp.iw_dof, self.rng
        )
        self._refresh_sigma_inv()

    def _impute(self, out: np.ndarray | None, draw_idx: int):
        rows, cols = self.prep.missing_index.T if self.prep.missing_index.size else (None, None)
        if rows is None or out is None:
            return
        out[draw_idx] = sample_normal(self.mu[rows, cols], self.sigma[cols], self.rng)

    # ---- health updates ----

    def _update_beta(self, during_burnin: bool):
        if "beta" in self.fixed:
            return
        adapter = self.adapters["beta"]
        prior_sds = self.hp.effect_sd  # per standardized unit

        def target(beta: np.ndarray) -> float:
            delta_eta = self.x_expo_v @ (beta - self.beta_std)
            return self._ll_eta(self.eta_v + delta_eta) - 0.5 * float(
                beta @ beta
            ) / prior_sds**2

        new, accepted = mh_step(target, self.beta_std, adapter.scale, self.rng, adapter.chol)
        adapter.record(float(accepted), during_burnin, new)
        if accepted:
            delta_eta = self.x_expo_v @ (new - self.beta_std)
            self.beta_std = new
            self.c_expo += delta_eta
            self.eta_v += delta_eta

    def _update_scalar_coef(self, name: str, during_burnin: bool):
        adapter = self.adapters[name]
        coef_sd = self.hp.coef_sd
        if name == "beta0":
            current = self.beta0
            mult = np.ones(self.nv)
        else:
            current = self.delta
            mult = self.hol_v

        def target(value: np.ndarray) -> float:
            delta_eta = (value[0] - current) * mult
            return self._ll_eta(self.eta_v + delta_eta) - 0.5 * value[0] ** 2 / coef_sd**2

        new, accepted = mh_step(target, np.array([current]), adapter.scale, self.rng)
        adapter.record(float(accepted), during_burnin)
        if accepted:
            self.eta_v += (new[0] - current) * mult
            if name == "beta0":
                self.beta0 = float(new[0])
            else:
                self.delta = float(new[0])

    def _update_smooth(self, i: int, during_burnin: bool):
        """One-step Gaussian-approximation MH for a whole smooth block.

        A random-walk proposal mixes too slowly in 10+ dimensions for the
        chain to express the block's posterior variance, which silently
        deflates the DIC parameter count. The Newton-step proposal tracks
        the log-concave conditional closely, so draws are near independent.
        """
        label = self.prep.smooth_labels[i]
        adapter = self.adapters[f"smooth_{label}"]
        design = self.smooth_designs[i]
        current = self.smooth_coefs[i]
        prior_prec = np.full(current.size, self.taus[i])
        prior_prec[0] = 1.0 / self.hp.coef_sd**2
        base = self.eta_v - self.c_smooth[i]

        def gaussian_step(coefs: np.ndarray):
            """Log conditional plus the Newton proposal (mean, factor) at coefs."""
            eta = base + design @ coefs
            with np.errstate(over="ignore"):
                lam = self.expected * np.exp(eta)
            if not np.all(np.isfinite(lam)):
                return None
            logp = float(self.oh_v @ eta - lam.sum()) - 0.5 * float(
                prior_prec @ (coefs * coefs)
            )
            grad = design.T @ (self.oh_v - lam) - prior_prec * coefs
            hess = design.T @ (lam[:, None] * design)
            hess[np.diag_indices_from(hess)] += prior_prec
            try:
                factor = cho_factor(hess, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                return None
            mean = coefs + cho_solve(factor, grad, check_finite=False)
            return logp, mean, factor

        def log_density(x: np.ndarray, mean: np.ndarray, factor) -> float:
            lower = np.tril(factor[0])
            shifted = lower.T @ (x - mean)
            return float(np.log(lower.diagonal()).sum() - 0.5 * shifted @ shifted)

        at_current = gaussian_step(current)
        if at_current is None:
            raise NonFiniteCurrentTarget(
                "smooth-term conditional is non-finite at the current state"
            )
        logp_c, mean_c, factor_c = at_current
        z = self.rng.standard_normal(current.size)
        proposal = mean_c + solve_triangular(
            factor_c[0], z, trans="T", lower=True, check_finite=False
        )
        accepted = False
        at_proposal = gaussian_step(proposal)
        if at_proposal is not None:
            logp_p, mean_p, factor_p = at_proposal
            log_alpha = (
                logp_p
                - logp_c
                + log_density(current, mean_p, factor_p)
                - log_density(proposal, mean_c, factor_c)
            )
            accepted = bool(
                np.isfinite(log_alpha) and np.log(self.rng.uniform()) < log_alpha
            )
        adapter.record(float(accepted), during_burnin)
        if accepted:
            delta_eta = design @ (proposal - current)
            self.smooth_coefs[i] = proposal
            self.c_smooth[i] = self.c_smooth[i] + delta_eta
            self.eta_v += delta_eta

    def _update_taus(self):
        a0, b0 = self.hp.spline_precision
        for i, coefs in enumerate(self.smooth_coefs):
            cubic = coefs[1:]
            self.taus[i] = float(
                sample_gamma(a0 + 0.5 * cubic.size, b0 + 0.5 * float(cubic @ cubic), self.rng)
            )

    def _update_eps(self, during_burnin: bool):
        if not self.nv:
            return
        adapter = self.adapters["eps"]
        step = adapter.scale * self.rng.standard_normal(self.nv)
        proposal = self.eps + step
        old_eta = self.eta_v
        new_eta = old_eta + step
        with np.errstate(over="ignore"):
            delta = (
                self.oh_v * step
                - self.expected * (np.exp(new_eta) - np.exp(old_eta))
                - 0.5 * (proposal**2 - self.eps**2) / self.sigma_eps**2
            )
        accept = np.log(self.rng.uniform(size=self.nv)) < delta
        if np.any(accept):
            self.eps = np.where(accept, proposal, self.eps)
            self.eta_v = np.where(accept, new_eta, old_eta)
        adapter.record(float(accept.mean()), during_burnin)

    def _update_sigma_eps(self, during_burnin: bool):
        adapter = self.adapters["log_sigma_eps"]
        hp = self.hp
        sse = float(self.eps @ self.eps)
        n = self.nv

        def target(log_sd: np.ndarray) -> float:
            sd = float(np.exp(log_sd[0]))
            prior = self._log_prior_sd(sd, hp.sigma_upper, hp.variance_ig)
            if not np.isfinite(prior):
                return -np.inf
            return float(-n * np.log(sd) - 0.5 * sse / sd**2 + prior)

        new, accepted = mh_step(
            target, np.array([np.log(self.sigma_eps)]), adapter.scale, self.rng
        )
        adapter.record(float(accepted), during_burnin)
        if accepted:
            self.sigma_eps = float(np.exp(new[0]))

    # ---- sweeps ----

    def _sweep(self, iteration: int, during_burnin: bool):
        if self.mode in ("joint", "exposure"):
            self._update_gamma(during_burnin)
            self._update_theta(during_burnin)
            self._update_sigma(during_burnin)
            self._update_sigma_cov()
        if self.mode in ("joint", "health"):
            if self.cycle_feed:
                feed = self.exposure_feed[iteration % self.exposure_feed.shape[0]]
                self._set_exposure_rows(feed)
                self._rebuild_eta()
            self._update_beta(during_burnin)
            self._update_scalar_coef("beta0", during_burnin)
            if self.use_delta:
                self._update_scalar_coef("delta", during_burnin)
            for i in range(len(self.prep.bases)):
                self._update_smooth(i, during_burnin)
            if self.prep.bases:
                self._update_taus()
            if self.use_eps:
                self._update_eps(during_burnin)
                if self.nv:
                    self._update_sigma_eps(during_burnin)

    def _check_finite(self):
        pieces = [self.eta_v, self.beta_std]
        if self.mode in ("joint", "exposure"):
            pieces += [self.theta, self.sigma, self.sigma_cov]
        for piece in pieces:
            if not np.all(np.isfinite(piece)):
                raise NonFiniteLogPosterior("sampler state became non-finite")
        if self.nv and not np.isfinite(self._ll_eta(self.eta_v)):
            raise NonFiniteLogPosterior("health log likelihood is non-finite")

    def run(self) -> dict:
        cfg = self.cfg
        n_iter = cfg.burn_in + cfg.retained
        r = cfg.n_draws
        store: dict[str, np.ndarray] = {}
        scaling = self.prep.scaling
        if self.mode in ("joint", "health"):
            store["beta_std"] = np.empty((r, self.p))
            store["beta"] = np.empty((r, self.p))
            store["beta0_internal"] = np.empty(r)
            store["beta0"] = np.empty(r)
            store["deviance"] = np.empty(r)
            if self.use_delta:
                store["delta"] = np.empty(r)
            if self.use_eps and self.nv:
                store["sigma_eps"] = np.empty(r)
            for i, label in enumerate(self.prep.smooth_labels):
                store[f"spline_{label}"] = np.empty((r, self.smooth_coefs[i].size))
                store[f"tau_{label}"] = np.empty(r)
            eta_sum = np.zeros(self.nv)
        if self.mode in ("joint", "exposure"):
            if self.gamma is not None:
                store["gamma"] = np.empty((r, self.p, self.kg))
            store["sigma_p"] = np.empty((r, self.p))
            store["Sigma_P"] = np.empty((r, self.p, self.p))
            mu_sum = np.zeros((self.t, self.p))
            mu_sq = np.zeros((self.t, self.p))
            if cfg.store_mu or self.mode == "exposure":
                store["mu"] = np.empty((r, self.t, self.p))
            if cfg.store_imputed and self.prep.missing_index.size:
                store["imputed"] = np.empty((r, self.prep.missing_index.shape[0]))

        for i in range(n_iter):
            during_burnin = i < cfg.burn_in
            self._sweep(i, during_burnin)
            if during_burnin and (i + 1) % cfg.adapt_window == 0:
                for adapter in self.adapters.values():
                    adapter.adapt()
            if i + 1 == cfg.burn_in:
                for adapter in self.adapters.values():
                    adapter.freeze()
            if during_burnin or (i - cfg.burn_in) % cfg.thinning:
                continue
            k = (i - cfg.burn_in) // cfg.thinning
            self._check_finite()
            if self.mode in ("joint", "health"):
                store["beta_std"][k] = self.beta_std
                beta_orig = self.beta_std / scaling.sds
                store["beta"][k] = beta_orig
                store["beta0_internal"][k] = self.beta0
                store["beta0"][k] = self.beta0 - float(beta_orig @ scaling.means)
                ll = self._ll_eta(self.eta_v) + self.dev_const
                store["deviance"][k] = -2.0 * ll
                if self.use_delta:
                    store["delta"][k] = self.delta
                if self.use_eps and self.nv:
                    store["sigma_eps"][k] = self.sigma_eps
                for i_s, label in enumerate(self.prep.smooth_labels):
                    store[f"spline_{label}"][k] = self.smooth_coefs[i_s]
                    store[f"tau_{label}"][k] = self.taus[i_s]
                eta_sum += self.eta_v
            if self.mode in ("joint", "exposure"):
                if self.gamma is not None:
                    store["gamma"][k] = self.gamma
                store["sigma_p"][k] = self.sigma
                store["Sigma_P"][k] = self.sigma_cov
                mu_sum += self.mu
                mu_sq += self.mu * self.mu
                if "mu" in store:
                    store["mu"][k] = self.mu
                if "imputed" in store:
                    self._impute(store["imputed"], k)

        out: dict = {"draws": store}
        out["acceptance"] = {
            label: adapter.post_rate for label, adapter in self.adapters.items()
        }
        if self.mode in ("joint", "exposure"):
            if cfg.theta_proposal == "conditional":
                # exposure-only stages accept every conditional draw by
                # construction; joint mode pays the health correction
                out["acceptance"]["theta"] = (
                    self._theta_acc / self._theta_cnt if self._theta_cnt else 1.0
                )
            else:
                rates = [
                    self.adapters[f"theta:{b}"].post_rate for b in range(len(self.blocks))
                ]
                out["acceptance"]["theta"] = float(np.mean(rates))
        out["scales"] = {label: adapter.scale for label, adapter in self.adapters.items()}
        if self.mode in ("joint", "exposure"):
            out["mu_mean"] = mu_sum / r
            out["mu_sd"] = np.sqrt(np.maximum(mu_sq / r - out["mu_mean"] ** 2, 0.0))
        if self.mode in ("joint", "health"):
            out["eta_mean"] = eta_sum / r if self.nv else np.zeros(0)
        return out


# ==== variant drivers ====


def _merge_chain_parts(parts: list[dict]) -> dict:
    merged: dict = {"draws": {}, "acceptance": {}, "scales": {}}
    for part in parts:
        merged["draws"].update(part["draws"])
        merged["acceptance"].update(part["acceptance"])
        merged["scales"].update(part["scales"])
        for key in ("mu_mean", "mu_sd", "eta_mean"):
            if key in part:
                merged[key] = part[key]
    return merged


def run_chain(
    config: ModelConfig, dataset: TimeSeriesDataset, seed: int | SeedTree
) -> ChainDraws:
    """Run one chain of the configured variant and return its draws."""
    tree = seed if isinstance(seed, SeedTree) else SeedTree(int(seed))
    prep = _prepare(config, dataset)
    started = time.perf_counter()
    if config.variant == "H2Mjoint":
        runner = _ChainRunner(config, prep, "joint", tree.child("joint").generator())
        parts = [runner.run()]
    elif config.variant == "ME":
        runner = _ChainRunner(config, prep, "health", tree.child("health").generator())
        parts = [runner.run()]
    else:  # H2M: exposure stage first, bitwise independent of the outcome
        exposure = _ChainRunner(
            config, prep, "exposure", tree.child("exposure").generator()
        )
        expo_part = exposure.run()
        feed = expo_part["draws"]["mu"][:, : max(dataset.n_days - config.lag, 0), :]
        if not config.store_mu:
            expo_part["draws"].pop("mu")
        health = _ChainRunner(
            config,
            prep,
            "health",
            tree.child("health").generator(),
            exposure_feed=feed,
            cycle_feed=True,
        )
        parts = [expo_part, health.run()]
    merged = _merge_chain_parts(parts)
    return ChainDraws(
        variant=config.variant,
        pollutant_names=prep.scaling.pollutant_names,
        n_days=dataset.n_days,
        lag=config.lag,
        draws=merged["draws"],
        acceptance=merged["acceptance"],
        scales=merged["scales"],
        mu_mean=merged.get("mu_mean"),
        mu_sd=merged.get("mu_sd"),
        eta_mean=merged.get("eta_mean"),
        missing_index=prep.missing_index if prep.missing_index.size else None,
        seed_path=tree.path,
        elapsed_seconds=time.perf_counter() - started,
    )


def _chain_worker(args) -> ChainDraws:
    config, dataset, master_seed, chain_index = args
    return run_chain(config, dataset, SeedTree(master_seed).child("chain", chain_index))


def run_model(config: ModelConfig, dataset: TimeSeriesDataset) -> list[ChainDraws]:
    """Run every chain (serially or in processes); results are order-stable
    and independent of the degree of parallelism."""
    jobs = [(config, dataset, config.seed, c) for c in range(config.chains)]
    if config.jobs > 1 and config.chains > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(config.jobs, config.chains)) as pool:
            return list(pool.map(_chain_worker, jobs))
    return [_chain_worker(job) for job in jobs]


def run_exposure_chain(
    config: ModelConfig, dataset: TimeSeriesDataset, seed: int | SeedTree
) -> ChainDraws:
    """Exposure component alone (no outcome feedback); used by tests and
    available for latent-surface studies."""
    tree = seed if isinstance(seed, SeedTree) else SeedTree(int(seed))
    prep = _prepare(config, dataset)
    started = time.perf_counter()
    runner = _ChainRunner(config, prep, "exposure", tree.child("exposure").generator())
    merged = _merge_chain_parts([runner.run()])
    return ChainDraws(
        variant="exposure",
        pollutant_names=prep.scaling.pollutant_names,
        n_days=dataset.n_days,
        lag=config.lag,
        draws=merged["draws"],
        acceptance=merged["acceptance"],
        scales=merged["scales"],
        mu_mean=merged.get("mu_mean"),
        mu_sd=merged.get("mu_sd"),
        eta_mean=None,
        missing_index=prep.missing_index if prep.missing_index.size else None,
        seed_path=tree.path,
        elapsed_seconds=time.perf_counter() - started,
    )
