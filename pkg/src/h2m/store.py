"""Plain-text persistence for draws, summaries, and run manifests.

Everything lands as CSV or JSON so results stay inspectable; the columnar
format additionally saves the large per-day arrays as ``.npy`` blobs.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .dataset import TimeSeriesDataset
from .mcmc import ChainDraws, ModelConfig


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def config_as_dict(config: ModelConfig) -> dict:
    return _jsonable(dataclasses.asdict(config))


def write_manifest(
    out_dir: Path,
    command: str,
    seed: int,
    config: dict,
    timings: dict,
    dataset: TimeSeriesDataset | None = None,
    extra: dict | None = None,
) -> Path:
    payload = {
        "artifact_version": __version__,
        "command": command,
        "seed": int(seed),
        "config": _jsonable(config),
        "timings_seconds": {k: round(float(v), 3) for k, v in timings.items()},
    }
    if dataset is not None:
        payload["dataset_hash"] = dataset.content_hash()
        payload["n_days"] = dataset.n_days
        payload["pollutants"] = list(dataset.pollutant_names)
    if extra:
        payload.update(_jsonable(extra))
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def chain_frame(chain: ChainDraws) -> pd.DataFrame:
    """Flatten one chain's scalar draws into a draw-by-parameter table."""
    from .diagnostics import _UNSUMMARIZED_KEYS, _flatten_key

    columns: dict[str, np.ndarray] = {}
    for key in sorted(chain.draws):
        if key in _UNSUMMARIZED_KEYS:
            continue
        for label, values in _flatten_key(key, chain.draws[key], chain.pollutant_names):
            columns[label] = values
    return pd.DataFrame(columns)


def write_chains(
    out_dir: Path, chains: list[ChainDraws], fmt: str = "csv", suffix: str = ""
) -> list[Path]:
    """One draws file per chain plus per-day posterior accumulators.

    ``suffix`` keeps files apart when several fits share one directory
    (single-pollutant mode writes e.g. ``draws_no2_chain0.csv``).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for c, chain in enumerate(chains):
        frame = chain_frame(chain)
        path = out_dir / f"draws{suffix}_chain{c}.csv"
        frame.to_csv(path, index=False, float_format="%.17g")
        written.append(path)
        if chain.mu_mean is not None:
            names = list(chain.pollutant_names)
            pd.DataFrame(chain.mu_mean, columns=names).to_csv(
                out_dir / f"mu_mean{suffix}_chain{c}.csv", index=False, float_format="%.10g"
            )
            pd.DataFrame(chain.mu_sd, columns=names).to_csv(
                out_dir / f"mu_sd{suffix}_chain{c}.csv", index=False, float_format="%.10g"
            )
        if fmt == "columnar":
            for key in ("mu", "imputed"):
                if key in chain.draws:
                    np.save(out_dir / f"{key}{suffix}_chain{c}.npy", chain.draws[key])
            if chain.missing_index is not None:
                np.save(out_dir / f"missing_index{suffix}_chain{c}.npy", chain.missing_index)
    return written


def load_chain_frames(draws_dir: Path) -> list[pd.DataFrame]:
    """Read back every chain's draws table, ordered by chain index."""
    draws_dir = Path(draws_dir)
    paths = sorted(draws_dir.glob("draws_chain*.csv"))
    if not paths:
        raise FileNotFoundError(f"no draws_chain*.csv under {draws_dir}")
    return [pd.read_csv(p, float_precision="round_trip") for p in paths]


def write_acceptance_rates(out_dir: Path, chains: list[ChainDraws], suffix: str = "") -> Path:
    rows = []
    for c, chain in enumerate(chains):
        for label, rate in sorted(chain.acceptance.items()):
            rows.append({"chain": c, "block": label, "acceptance": rate})
    path = Path(out_dir) / f"acceptance{suffix}.csv"
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.6g")
    return path


def write_json(path: Path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())
