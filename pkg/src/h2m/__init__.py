"""Hierarchical two-component model for multi-pollutant exposure and health counts."""

from __future__ import annotations

__version__ = "0.1.0"

from .dataset import (
    PollutantScaler,
    TimeSeriesDataset,
    descriptives,
    empirical_correlation,
    load_dataset,
    standardize,
)
from .diagnostics import (
    DicReport,
    PosteriorSummary,
    dic,
    dic_from_chains,
    gelman_rubin,
    mc_error,
    summarize,
)
from .errors import H2MError
from .health import percent_increase
from .mcmc import ChainDraws, ModelConfig, run_chain, run_model
from .model import PollutionHealthModel
from .rng import SeedTree
from .simulation import (
    SimulationConfig,
    run_study,
    simulate_confounded_dataset,
    simulate_dataset,
    study_model_configs,
)

__all__ = [
    "ChainDraws",
    "DicReport",
    "H2MError",
    "ModelConfig",
    "PollutantScaler",
    "PollutionHealthModel",
    "PosteriorSummary",
    "SeedTree",
    "SimulationConfig",
    "TimeSeriesDataset",
    "__version__",
    "descriptives",
    "dic",
    "dic_from_chains",
    "empirical_correlation",
    "gelman_rubin",
    "load_dataset",
    "mc_error",
    "percent_increase",
    "run_chain",
    "run_model",
    "run_study",
    "simulate_confounded_dataset",
    "simulate_dataset",
    "standardize",
    "study_model_configs",
    "summarize",
]
