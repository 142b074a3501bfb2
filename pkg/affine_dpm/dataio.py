import hashlib
import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
import scipy

from affine_dpm import constants
from affine_dpm.density import Grid, default_grid
from affine_dpm.model import (
    AffineMap,
    AlphaSpec,
    BaseMeasure,
    EmpiricalBayesRule,
    HyperPriorSpec,
)
from affine_dpm.sampler import ChainConfig

__doc__ = r"""
# Overview
Readers and writers for data files, JSON configuration and run manifests.

## Data files
Data are comma-separated, one observation per row, with an optional header. Values are written with 17 significant digits so that a write/read cycle is lossless.

## Configuration
A run is configured by a JSON document with the sections below. Missing sections fall back to `affine_dpm.constants`; unknown sections are ignored with a warning.

| Section | Fields |
| --- | --- |
| `base_measure` | `m0`, `B0`, `nu0`, `S0` |
| `empirical_bayes` | `gamma1`, `gamma2`, `nu0` |
| `hyperprior` | `b0_df`, `b0_scale`, `m0_mean`, `kappa0` |
| `alpha` | `mode`, `value`, `shape`, `rate` |
| `affine` | `C`, `b` |
| `sampler` | `n_iter`, `burn_in`, `thin`, `aux_m`, `seed`, `record_params` |
| `grid` | `axes` (list of `[min, max, steps]`), `cap` |
| `analysis` | `expected_sigma`, `nu0`, `b0_df`, `b0_scale`, `credible_level`, `label_column` |

## Manifests
Every command writes a `manifest.json` recording the command, its arguments, the configuration and its SHA-256 hash, the seed, package versions and the outputs produced.
"""

config_sections = (
    "base_measure",
    "empirical_bayes",
    "hyperprior",
    "alpha",
    "affine",
    "sampler",
    "grid",
    "analysis",
)


def _has_header(path):
    first = pd.read_csv(path, header=None, nrows=1, dtype=str).iloc[0]
    try:
        pd.to_numeric(first)
    except (ValueError, TypeError):
        return True
    return False


def read_table(path):
    """Reads a CSV with an optional header into a DataFrame."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such data file: {path}")
    if _has_header(path):
        return pd.read_csv(path, float_precision="round_trip")
    df = pd.read_csv(path, header=None, float_precision="round_trip")
    df.columns = [f"x{k + 1}" for k in range(df.shape[1])]
    return df


def read_data(path, label_column=None):
    """Reads numeric observations from a CSV.

    Parameters
    ----------
    path : str
    label_column : str, optional
        A column of reference labels to drop from the data

    Returns
    -------
    np.ndarray of shape (n, d)
        Or `(data, labels)` when `label_column` is given.

    Raises
    ------
    ValueError
        If a cell is not numeric
    """
    df = read_table(path)
    labels = None
    if label_column is not None:
        if label_column not in df.columns:
            raise KeyError(f"label column {label_column!r} not in {list(df.columns)}")
        labels = df.pop(label_column).to_numpy()
    try:
        data = df.apply(pd.to_numeric, errors="raise").to_numpy(dtype=float)
    except ValueError as e:
        raise ValueError(f"{path} contains non-numeric cells: {e}") from e
    logging.info(f"Read {data.shape[0]} observations of dimension {data.shape[1]} from {path}")
    return data if label_column is None else (data, labels)


def write_data(data, path, columns=None):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    columns = columns or [f"x{k + 1}" for k in range(data.shape[1])]
    pd.DataFrame(data, columns=columns).to_csv(path, index=False, float_format="%.17g")
    logging.info(f"Wrote {data.shape[0]} observations to {path}")


def write_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)


def load_config(path=None):
    """Reads a JSON configuration, warning about unknown sections."""
    if path is None:
        return {}
    config = read_json(path)
    if not isinstance(config, dict):
        raise ValueError(f"configuration in {path} must be a JSON object")
    unknown = [k for k in config if k not in config_sections]
    if unknown:
        warnings.warn(f"ignoring unknown configuration sections {unknown}")
    return config


def config_hash(config):
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def config_base_measure(config):
    """The base measure of a configuration: a BaseMeasure, an EmpiricalBayesRule or None."""
    if "base_measure" in config:
        return BaseMeasure.from_dict(config["base_measure"])
    if "empirical_bayes" in config:
        eb = config["empirical_bayes"]
        return EmpiricalBayesRule(eb["gamma1"], eb["gamma2"], eb["nu0"])
    return None


def config_hyperprior(config):
    if "hyperprior" not in config:
        return None
    return HyperPriorSpec.from_dict(config["hyperprior"])


def config_alpha(config):
    if "alpha" not in config:
        return AlphaSpec("fixed", constants.mog_alpha)
    return AlphaSpec.from_dict(config["alpha"])


def config_affine(config):
    if "affine" not in config:
        return None
    return AffineMap.from_dict(config["affine"])


def config_sampler(config, **overrides):
    """Sampler settings with command-line overrides applied (None values are ignored)."""
    settings = dict(config.get("sampler", {}))
    settings.update({k: v for k, v in overrides.items() if v is not None})
    return ChainConfig.from_dict(settings)


def config_grid(config, data=None):
    if "grid" in config:
        return Grid.from_dict(config["grid"])
    if data is None:
        raise KeyError("the configuration has no grid section and no data to build one from")
    return default_grid(data)


def package_versions():
    try:
        from affine_dpm.version import __version__
    except ImportError:
        __version__ = "unknown"
    return {
        "affine_dpm": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


@dataclass
class RunManifest:
    """Everything needed to re-run a command."""

    command: str
    arguments: dict
    config: dict
    seed: int
    config_hash: str = ""
    versions: dict = field(default_factory=package_versions)
    outputs: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.config_hash:
            self.config_hash = config_hash(self.config)

    def write(self, directory):
        path = os.path.join(directory, "manifest.json")
        write_json(asdict(self), path)
        logging.info(f"Wrote manifest to {path}")
        return path

    @classmethod
    def read(cls, path):
        return cls(**read_json(path))
