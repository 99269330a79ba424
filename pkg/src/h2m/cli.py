"""Command-line entry points: fit, simulate, study, diagnose.

One YAML config file drives everything; flags override the matching config
entries. Failures print a machine-readable JSON object to stderr and exit
with 2 (input or config), 3 (diagnostics flagged) or 4 (numerical).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import errors, store
from .dataset import TimeSeriesDataset, descriptives, load_dataset
from .diagnostics import (
    MC_ERROR_SD_FRACTION,
    RHAT_WARN_THRESHOLD,
    dic_from_chains,
    gelman_rubin,
    mc_error,
    summarize,
    write_summary_csv,
)
from .errors import ConfigError, H2MError, TooFewChains
from .health import expected_count
from .mcmc import ModelConfig, health_day_index, run_model
from .rng import SeedTree
from .simulation import (
    ReplicateRecord,
    SimulationConfig,
    as_time_series_dataset,
    run_study,
    simulate_dataset,
    study_model_configs,
    write_study_csv,
)

log = logging.getLogger("h2m")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIAGNOSTIC = 3
EXIT_NUMERIC = 4

_CONFIG_ERRORS = (
    errors.ConfigError,
    errors.InvalidParameter,
    errors.InvalidDof,
)
_DATA_ERRORS = (
    errors.MissingColumn,
    errors.NonContiguousDates,
    errors.MissingOutcome,
    errors.EmptyPollutantColumn,
    errors.ZeroVariance,
    errors.InsufficientOverlap,
    errors.TooFewDistinctValues,
    errors.DimensionMismatch,
    errors.LagUnavailable,
    errors.TooFewChains,
    errors.TooFewDraws,
    errors.NonPositiveRate,
)
_NUMERIC_ERRORS = (
    errors.SingularScale,
    errors.RankDeficient,
    errors.NonFiniteCurrentTarget,
    errors.NonFiniteLogPosterior,
    errors.NonFiniteDeviance,
    errors.OverflowRate,
    errors.NotPositiveDefinite,
    errors.SingularCovariance,
    errors.NonPositiveScale,
    np.linalg.LinAlgError,
)
_IO_ERRORS = (FileNotFoundError, PermissionError, IsADirectoryError, yaml.YAMLError)


def classify_error(exc: BaseException) -> tuple[str, int]:
    """Map an exception to (error code, exit status)."""
    if isinstance(exc, _CONFIG_ERRORS):
        return "CONFIG", EXIT_INPUT
    if isinstance(exc, _DATA_ERRORS):
        return "DATA", EXIT_INPUT
    if isinstance(exc, _NUMERIC_ERRORS):
        return "NUMERIC", EXIT_NUMERIC
    if isinstance(exc, _IO_ERRORS) or isinstance(exc, OSError):
        return "IO", EXIT_INPUT
    return "INTERNAL", EXIT_NUMERIC


def error_payload(exc: BaseException) -> dict:
    code, _ = classify_error(exc)
    return {
        "error": {
            "code": code,
            "type": type(exc).__name__,
            "message": str(exc),
        }
    }


# ==== configuration file ====

_SECTIONS = ("data", "model", "priors", "mcmc", "simulation")

_DATA_KEYS = {
    "path",
    "pollutants",
    "date_column",
    "outcome_column",
    "temperature_column",
    "humidity_column",
    "holiday_column",
}
_MODEL_KEYS = {
    "variant",
    "lag",
    "knots",
    "knots_time",
    "knots_temperature",
    "knots_humidity",
    "include_covariates",
    "include_smooths",
    "include_holiday",
    "include_overdispersion",
}
_PRIOR_KEYS = {"set", "pollutant_effect_sd"}
_MCMC_KEYS = {
    "burn_in",
    "retained",
    "thinning",
    "chains",
    "seed",
    "adapt_window",
    "theta_block_days",
    "theta_proposal",
    "rho",
    "store_mu",
    "store_imputed",
    "jobs",
}
_SIMULATION_KEYS = {
    "n_days",
    "correlation",
    "true_beta",
    "true_intercept",
    "measurement_variance",
    "replicates",
    "seed",
    "stabilize",
    "variants",
}


def load_config(path: str | Path | None) -> dict:
    """Parse and sanity-check the YAML config; unknown keys are errors."""
    if path is None:
        return {}
    text = Path(path).read_text()
    raw = yaml.safe_load(text)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping of sections")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    allowed = {
        "data": _DATA_KEYS,
        "model": _MODEL_KEYS,
        "priors": _PRIOR_KEYS,
        "mcmc": _MCMC_KEYS,
        "simulation": _SIMULATION_KEYS,
    }
    for name, section in raw.items():
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        bad = set(section) - allowed[name]
        if bad:
            raise ConfigError(f"unknown keys in section {name!r}: {sorted(bad)}")
    return raw


def _knot_kwargs(model: dict) -> dict:
    out = {}
    knots = model.get("knots")
    if knots is not None:
        if not isinstance(knots, (list, tuple)) or len(knots) != 3:
            raise ConfigError("model.knots must be a list [time, temperature, humidity]")
        out["knots_time"], out["knots_temperature"], out["knots_humidity"] = (
            int(k) for k in knots
        )
    for key in ("knots_time", "knots_temperature", "knots_humidity"):
        if key in model:
            out[key] = int(model[key])
    return out


def build_model_config(
    cfg: dict, args: argparse.Namespace | None = None, variant: str | None = None
) -> ModelConfig:
    """Merge the model/priors/mcmc sections and CLI overrides into a ModelConfig."""
    model = dict(cfg.get("model", {}))
    priors = dict(cfg.get("priors", {}))
    mcmc = dict(cfg.get("mcmc", {}))

    kwargs: dict = {}
    kwargs.update(_knot_kwargs(model))
    for key in (
        "variant",
        "lag",
        "include_covariates",
        "include_smooths",
        "include_holiday",
        "include_overdispersion",
    ):
        if key in model:
            kwargs[key] = model[key]
    if "set" in priors:
        kwargs["prior_set"] = priors["set"]
    if "pollutant_effect_sd" in priors:
        kwargs["pollutant_effect_sd"] = float(priors["pollutant_effect_sd"])
    for key in _MCMC_KEYS:
        if key in mcmc:
            kwargs[key] = mcmc[key]

    if variant is not None:
        kwargs["variant"] = variant
    if args is not None:
        if getattr(args, "variant", None) and variant is None:
            kwargs["variant"] = args.variant
        if getattr(args, "seed", None) is not None:
            kwargs["seed"] = args.seed
        if getattr(args, "jobs", None) is not None:
            kwargs["jobs"] = args.jobs
    return ModelConfig(**kwargs)


def build_simulation_config(cfg: dict, args: argparse.Namespace | None = None) -> SimulationConfig:
    sim = dict(cfg.get("simulation", {}))
    sim.pop("variants", None)
    if args is not None and getattr(args, "seed", None) is not None:
        sim["seed"] = args.seed
    return SimulationConfig(**sim)


def _load_fit_dataset(cfg: dict, args: argparse.Namespace) -> tuple[TimeSeriesDataset, str]:
    data_cfg = dict(cfg.get("data", {}))
    path = getattr(args, "data", None) or data_cfg.get("path")
    if path is None:
        raise ConfigError("no dataset: pass --data or set data.path in the config")
    if not Path(path).exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    pollutants = data_cfg.get("pollutants")
    if not pollutants:
        raise ConfigError("data.pollutants must name at least one column")
    column_kwargs = {
        key: data_cfg[key]
        for key in (
            "date_column",
            "outcome_column",
            "temperature_column",
            "humidity_column",
            "holiday_column",
        )
        if key in data_cfg
    }
    return load_dataset(path, pollutants, **column_kwargs), str(path)


def _ensure_out_dir(path: str | Path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _single_pollutant_dataset(dataset: TimeSeriesDataset, index: int) -> TimeSeriesDataset:
    return TimeSeriesDataset(
        dates=dataset.dates,
        outcome=dataset.outcome,
        temperature=dataset.temperature,
        humidity=dataset.humidity,
        holiday=dataset.holiday,
        pollutants=dataset.pollutants[:, [index]],
        pollutant_names=(dataset.pollutant_names[index],),
    )


def _fit_outputs(
    out: Path,
    config: ModelConfig,
    dataset: TimeSeriesDataset,
    fmt: str,
    suffix: str = "",
) -> dict:
    """Run one model and write draws, summary, DIC and acceptance files."""
    chains = run_model(config, dataset)
    store.write_chains(out, chains, fmt=fmt, suffix=suffix)

    desc = descriptives(dataset)
    iqrs = {name: desc.row(name)["iqr"] for name in dataset.pollutant_names}
    summary = summarize(chains, iqrs=iqrs)
    write_summary_csv(summary, out / f"summary{suffix}.csv")

    idx = health_day_index(config, dataset)
    outcome_modeled = dataset.outcome[config.lag :][idx]
    expected = expected_count(dataset.outcome).value
    report = dic_from_chains(chains, outcome_modeled, expected)
    store.write_json(
        out / f"dic{suffix}.json",
        {
            "mean_deviance": report.mean_deviance,
            "plugin_deviance": report.plugin_deviance,
            "effective_parameters": report.effective_parameters,
            "dic": report.dic,
        },
    )
    store.write_acceptance_rates(out, chains, suffix=suffix)
    for line in summary.warnings:
        log.warning("%s", line)
    return {
        "dic": report.dic,
        "warnings": summary.warnings,
        "n_draws": sum(c.n_draws for c in chains),
    }


def cmd_fit(args: argparse.Namespace) -> int:
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    dataset, data_path = _load_fit_dataset(cfg, args)
    timings["load"] = time.perf_counter() - t0
    out = _ensure_out_dir(args.out)

    variant = args.variant or cfg.get("model", {}).get("variant", "H2Mjoint")
    t1 = time.perf_counter()
    if variant == "single":
        # one-pollutant joint fits, one summary table per pollutant
        base = build_model_config(cfg, args, variant="H2Mjoint")
        results = {}
        for j, name in enumerate(dataset.pollutant_names):
            seed_j = int(
                SeedTree(base.seed).child("single", j).generator().integers(0, 2**31 - 1)
            )
            sub_config = dataclasses.replace(base, seed=seed_j)
            sub_data = _single_pollutant_dataset(dataset, j)
            results[name] = _fit_outputs(out, sub_config, sub_data, args.format, f"_{name}")
            log.info("single-pollutant fit %s done", name)
        timings["fit"] = time.perf_counter() - t1
        extra = {"mode": "single", "results": results}
        resolved = store.config_as_dict(base)
        seed = base.seed
    else:
        config = build_model_config(cfg, args, variant=variant)
        results = _fit_outputs(out, config, dataset, args.format)
        timings["fit"] = time.perf_counter() - t1
        extra = {"mode": "multi", "results": results}
        resolved = store.config_as_dict(config)
        seed = config.seed

    extra["data_path"] = data_path
    store.write_manifest(out, "fit", seed, resolved, timings, dataset=dataset, extra=extra)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    timings: dict[str, float] = {}
    cfg = load_config(args.config)
    sim_config = build_simulation_config(cfg, args)
    out = _ensure_out_dir(args.out)
    data_path = out / "simulated.csv"
    latent_path = out / "latent.csv"
    truth_path = out / "truth.json"

    t0 = time.perf_counter()
    try:
        sim = simulate_dataset(sim_config, sim_config.seed)
    except errors.OverflowRate as exc:
        # record the failure and leave no partial data behind
        for path in (data_path, latent_path, truth_path):
            path.unlink(missing_ok=True)
        timings["simulate"] = time.perf_counter() - t0
        store.write_manifest(
            out,
            "simulate",
            sim_config.seed,
            _sim_config_dict(sim_config),
            timings,
            extra={"status": "failed", **error_payload(exc)},
        )
        raise
    timings["simulate"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    dataset = as_time_series_dataset(sim)
    names = list(dataset.pollutant_names)
    frame = pd.DataFrame({"date": dataset.dates.astype(str), "outcome": sim.outcome.astype(int)})
    frame["temp"] = dataset.temperature
    frame["rhum"] = dataset.humidity
    frame["holiday"] = dataset.holiday.astype(int)
    for j, name in enumerate(names):
        frame[name] = sim.observed[:, j]
    frame.to_csv(data_path, index=False, float_format="%.10g")
    pd.DataFrame(sim.mu, columns=names).to_csv(latent_path, index=False, float_format="%.10g")
    store.write_json(
        truth_path,
        {
            "true_beta": sim.true_beta,
            "true_intercept": sim.true_intercept,
            "measurement_variance": sim.measurement_variance,
            "stabilized": sim.stabilized,
            "pollutants": names,
        },
    )
    timings["write"] = time.perf_counter() - t1
    store.write_manifest(
        out,
        "simulate",
        sim_config.seed,
        _sim_config_dict(sim_config),
        timings,
        dataset=dataset,
        extra={"status": "ok"},
    )
    return EXIT_OK


def _sim_config_dict(sim_config: SimulationConfig) -> dict:
    payload = dataclasses.asdict(sim_config)
    payload["correlation"] = np.asarray(sim_config.correlation).tolist()
    payload["true_beta"] = list(sim_config.true_beta)
    return payload


def _study_model_configs(cfg: dict, args: argparse.Namespace) -> dict[str, ModelConfig]:
    sim = cfg.get("simulation", {})
    variants = tuple(sim.get("variants", ("ME", "H2M", "H2Mjoint")))
    overrides: dict = {}
    model = cfg.get("model", {})
    priors = cfg.get("priors", {})
    mcmc = cfg.get("mcmc", {})
    overrides.update(_knot_kwargs(model))
    for key in ("lag", "include_covariates", "include_smooths", "include_holiday",
                "include_overdispersion"):
        if key in model:
            overrides[key] = model[key]
    if "set" in priors:
        overrides["prior_set"] = priors["set"]
    if "pollutant_effect_sd" in priors:
        overrides["pollutant_effect_sd"] = float(priors["pollutant_effect_sd"])
    for key in _MCMC_KEYS - {"seed"}:
        if key in mcmc:
            overrides[key] = mcmc[key]
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = args.jobs
    if getattr(args, "variant", None):
        variants = (args.variant,)
    return study_model_configs(variants, **overrides)


def cmd_study(args: argparse.Namespace) -> int:
    timings: dict[str, float] = {}
    cfg = load_config(args.config)
    sim_config = build_simulation_config(cfg, args)
    model_configs = _study_model_configs(cfg, args)
    out = _ensure_out_dir(args.out)
    records_path = out / "records.json"

    completed: list[ReplicateRecord] = []
    if records_path.exists():
        stored = store.read_json(records_path)
        completed = [ReplicateRecord.from_jsonable(r) for r in stored.get("records", [])]
        log.info("resuming: %d completed replicates found", len(completed))

    t0 = time.perf_counter()
    metrics = run_study(sim_config, model_configs, completed=completed, progress=log.info)
    timings["study"] = time.perf_counter() - t0

    store.write_json(records_path, {"records": [r.to_jsonable() for r in metrics.records]})
    write_study_csv(metrics, out / "metrics.csv")
    store.write_manifest(
        out,
        "study",
        sim_config.seed,
        {
            "simulation": _sim_config_dict(sim_config),
            "fits": {name: store.config_as_dict(c) for name, c in model_configs.items()},
        },
        timings,
        extra={"failures": metrics.failures, "n_replicates": metrics.n_replicates},
    )
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    draws_dir = getattr(args, "data", None) or args.out
    if draws_dir is None:
        raise ConfigError("pass the draws directory via --data")
    frames = store.load_chain_frames(draws_dir)
    if len(frames) < 2:
        raise TooFewChains(
            f"found {len(frames)} chain file(s) under {draws_dir}; need at least 2"
        )
    common = [c for c in frames[0].columns if all(c in f.columns for f in frames)]
    rows = []
    flagged = []
    for column in common:
        chains = [f[column].to_numpy() for f in frames]
        pooled = np.concatenate(chains)
        sd = float(pooled.std(ddof=1))
        rhat = gelman_rubin(chains)
        err = mc_error(pooled)
        checks = []
        if rhat > RHAT_WARN_THRESHOLD:
            checks.append("rhat")
        if sd > 0 and err > MC_ERROR_SD_FRACTION * sd:
            checks.append("mc_error")
        rows.append(
            {
                "parameter": column,
                "rhat": rhat,
                "mc_error": err,
                "sd": sd,
                "flagged": ";".join(checks),
            }
        )
        if checks:
            flagged.append(column)
    report = pd.DataFrame(rows)
    out_dir = Path(args.out) if args.out else Path(draws_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_csv(out_dir / "diagnose.csv", index=False, float_format="%.6g")
    if flagged:
        log.warning("%d parameter(s) flagged: %s", len(flagged), ", ".join(flagged[:10]))
        print(f"FAIL: {len(flagged)} of {len(common)} parameters flagged")
        return EXIT_DIAGNOSTIC
    print(f"OK: {len(common)} parameters converged")
    return EXIT_OK


# ==== argument parsing ====


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="h2m",
        description="Hierarchical exposure/health model: fit, simulate, study, diagnose.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, need_out: bool = True):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--data", help="input path (dataset CSV, or draws dir for diagnose)")
        p.add_argument("--out", required=need_out, help="output directory")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--jobs", type=int, help="max parallel processes")
        p.add_argument(
            "--variant",
            help="model variant (ME, H2M, H2Mjoint) or 'single' for per-pollutant fits",
        )
        p.add_argument(
            "--format",
            choices=("csv", "columnar"),
            default="csv",
            help="draw storage format (columnar adds .npy blobs)",
        )

    add_common(sub.add_parser("fit", help="fit a model to a dataset"))
    add_common(sub.add_parser("simulate", help="generate one synthetic panel"))
    add_common(sub.add_parser("study", help="run the replicated simulation study"))
    add_common(sub.add_parser("diagnose", help="convergence report for stored draws"), need_out=False)
    return parser


_COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "study": cmd_study,
    "diagnose": cmd_diagnose,
}


def _configure_logging():
    level = os.environ.get("H2M_LOG", "WARNING").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "WARNING"
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - single funnel to the error contract
        payload = error_payload(exc)
        _, status = classify_error(exc)
        print(json.dumps(payload), file=sys.stderr)
        out = getattr(args, "out", None)
        if out:
            try:
                out_dir = Path(out)
                out_dir.mkdir(parents=True, exist_ok=True)
                store.write_json(out_dir / "error.json", payload)
            except OSError:
                log.debug("could not write error.json", exc_info=True)
        log.debug("command failed", exc_info=True)
        return status


if __name__ == "__main__":
    sys.exit(main())
