"""Convergence checks, Monte Carlo errors, DIC, and posterior summaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import gammaln

from .errors import NonFiniteDeviance, TooFewChains, TooFewDraws
from .health import percent_increase
from .mcmc import ChainDraws

RHAT_WARN_THRESHOLD = 1.05
MC_ERROR_SD_FRACTION = 0.05

# large blocks summarized through their accumulators, not draw by draw
_UNSUMMARIZED_KEYS = ("mu", "imputed")


def gelman_rubin(chains: list[np.ndarray]) -> float:
    """Potential scale reduction sqrt(Vhat / W) across parallel chains."""
    arrays = [np.asarray(c, dtype=float).ravel() for c in chains]
    if len(arrays) < 2:
        raise TooFewChains("at least two chains are required")
    n = min(a.size for a in arrays)
    if n < 4:
        raise TooFewDraws("need at least four draws per chain")
    stacked = np.stack([a[:n] for a in arrays])
    within = float(stacked.var(axis=1, ddof=1).mean())
    between = float(n * stacked.mean(axis=1).var(ddof=1))
    if within <= 0.0:
        return 1.0 if between <= 0.0 else float("inf")
    pooled = (n - 1) / n * within + between / n
    return float(np.sqrt(pooled / within))


def mc_error(draws: np.ndarray) -> float:
    """Batch-means Monte Carlo standard error with floor(sqrt(n)) batches."""
    x = np.asarray(draws, dtype=float).ravel()
    if x.size < 4:
        raise TooFewDraws("need at least four draws for batch means")
    n_batches = int(np.sqrt(x.size))
    per_batch = x.size // n_batches
    means = x[: n_batches * per_batch].reshape(n_batches, per_batch).mean(axis=1)
    return float(np.std(means, ddof=1) / np.sqrt(n_batches))


@dataclass(frozen=True)
class DicReport:
    mean_deviance: float
    plugin_deviance: float
    effective_parameters: float
    dic: float


def dic(
    deviance_draws: np.ndarray,
    outcome: np.ndarray,
    expected: float,
    eta_mean: np.ndarray,
) -> DicReport:
    """Deviance information criterion with the plug-in evaluated at the
    posterior mean linear predictor."""
    dev = np.asarray(deviance_draws, dtype=float).ravel()
    outcome = np.asarray(outcome, dtype=float)
    eta = np.asarray(eta_mean, dtype=float)
    if outcome.shape != eta.shape:
        raise NonFiniteDeviance("outcome and linear predictor lengths differ")
    if dev.size == 0 or not np.all(np.isfinite(dev)) or not np.all(np.isfinite(eta)):
        raise NonFiniteDeviance("deviance draws or linear predictor are non-finite")
    mean_dev = float(dev.mean())
    with np.errstate(over="ignore"):
        loglik = float(
            np.sum(
                outcome * (eta + np.log(expected))
                - expected * np.exp(eta)
                - gammaln(outcome + 1.0)
            )
        )
    plugin = -2.0 * loglik
    if not np.isfinite(plugin):
        raise NonFiniteDeviance("plug-in deviance is non-finite")
    p_d = mean_dev - plugin
    return DicReport(mean_dev, plugin, p_d, mean_dev + p_d)


@dataclass
class PosteriorSummary:
    frame: pd.DataFrame
    warnings: list[str] = field(default_factory=list)

    def row(self, parameter: str) -> pd.Series:
        match = self.frame[self.frame["parameter"] == parameter]
        if match.empty:
            raise KeyError(parameter)
        return match.iloc[0]


def _flatten_key(
    key: str, draws: np.ndarray, names: tuple[str, ...]
) -> list[tuple[str, np.ndarray]]:
    if draws.ndim == 1:
        return [(key, draws)]
    if draws.ndim == 2:
        labels = (
            names
            if draws.shape[1] == len(names) and key in ("beta", "beta_std", "sigma_p")
            else [str(j) for j in range(draws.shape[1])]
        )
        return [(f"{key}[{labels[j]}]", draws[:, j]) for j in range(draws.shape[1])]
    out = []
    if key == "Sigma_P":
        for a in range(draws.shape[1]):
            for b in range(a + 1):
                out.append((f"{key}[{names[a]},{names[b]}]", draws[:, a, b]))
        return out
    for a in range(draws.shape[1]):
        label = names[a] if draws.shape[1] == len(names) else str(a)
        for b in range(draws.shape[2]):
            out.append((f"{key}[{label},{b}]", draws[:, a, b]))
    return out


def summarize(
    chains: list[ChainDraws],
    iqrs: dict[str, float] | None = None,
    percentiles: tuple[float, ...] = (2.5, 50.0, 97.5),
) -> PosteriorSummary:
    """Pool chains into one summary table, one row per scalar parameter.

    Percent change in the expected count per interquartile-range increase
    is computed draw by draw from the original-unit coefficients whenever
    ``iqrs`` supplies the pollutant's IQR.
    """
    if not chains:
        raise TooFewChains("no chains to summarize")
    names = chains[0].pollutant_names
    series: dict[str, list[np.ndarray]] = {}
    for chain in chains:
        for key in sorted(chain.draws):
            if key in _UNSUMMARIZED_KEYS:
                continue
            for label, values in _flatten_key(key, chain.draws[key], names):
                series.setdefault(label, []).append(values)
    if iqrs:
        for j, name in enumerate(names):
            if name not in iqrs:
                continue
            label = f"percent_increase[{name}]"
            for chain in chains:
                if "beta" not in chain.draws:
                    continue
                series.setdefault(label, []).append(
                    percent_increase(chain.draws["beta"][:, j], iqrs[name])
                )

    rows = []
    warnings: list[str] = []
    for label, per_chain in series.items():
        pooled = np.concatenate(per_chain)
        sd = float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0
        err = mc_error(pooled) if pooled.size >= 4 else float("nan")
        rhat = gelman_rubin(per_chain) if len(per_chain) >= 2 else float("nan")
        qs = np.percentile(pooled, percentiles)
        rows.append(
            {
                "parameter": label,
                "mean": float(pooled.mean()),
                "sd": sd,
                "mc_error": err,
                **{f"q{p:g}": float(v) for p, v in zip(percentiles, qs)},
                "rhat": rhat,
                "n_draws": int(pooled.size),
            }
        )
        if np.isfinite(rhat) and rhat > RHAT_WARN_THRESHOLD:
            warnings.append(f"{label}: chains disagree (rhat={rhat:.3f})")
        if sd > 0 and np.isfinite(err) and err > MC_ERROR_SD_FRACTION * sd:
            warnings.append(
                f"{label}: Monte Carlo error {err:.3g} above "
                f"{MC_ERROR_SD_FRACTION:.0%} of posterior sd {sd:.3g}"
            )
    return PosteriorSummary(pd.DataFrame(rows), warnings)


def dic_from_chains(
    chains: list[ChainDraws], outcome_modeled: np.ndarray, expected: float
) -> DicReport:
    """DIC for a set of health chains sharing the same modeled days."""
    devs = np.concatenate([c.draws["deviance"] for c in chains])
    eta = np.mean([c.eta_mean for c in chains], axis=0)
    return dic(devs, outcome_modeled, expected, eta)


def write_summary_csv(summary: PosteriorSummary, path) -> None:
    summary.frame.to_csv(path, index=False, float_format="%.10g")
