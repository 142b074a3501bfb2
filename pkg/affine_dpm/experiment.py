import logging
import multiprocessing as mp
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from affine_dpm import clustering, constants
from affine_dpm.dataio import config_alpha, config_base_measure, config_hyperprior
from affine_dpm.density import default_grid, distance_matrix, normalize_matrix, rescaled_estimate
from affine_dpm.mathcore import RngStream
from affine_dpm.model import (
    AffineMap,
    AlphaSpec,
    HyperPriorSpec,
    alpha_prior_mean,
    check_robustness_condition,
    expected_clusters,
    map_base_measure,
    scale_for_expected_sigma,
    standardize,
)
from affine_dpm.sampler import (
    ChainConfig,
    DrawSet,
    SamplerError,
    SamplerStreams,
    posterior_k_distribution,
    run_chain,
    traces,
)
from affine_dpm.scenarios import ScenarioSpec, scenario_prior, simulate

__doc__ = r"""
# Overview
The replicate harness behind the simulation studies and the end-to-end analysis pipeline for standardised data.

## Studies
- `table1`: for every replicate, sample size $n$ and rescaling constant $c$, the number of clusters of the VI-optimal partition of a fit to $X_c = cX$ from the mog2d scenario. The aggregate is the mean over replicates, one row per $n$ and one column per $c$.
- `fig2`: for every replicate and $n$, the $L^1$ distances between the fits to the five rescaled datasets, each mapped back to the scale of $X$. The aggregate holds the mean distances, divided by the largest mean distance over all $n$.
- `fig4`: as `fig2`, on the univariate Student's t scenario.
- `prop1`: for random diagonal positive maps $g$, runs the chain on $(X, \pi)$ and on $(g(X), \pi_g)$ with the same seed and records, per iteration, whether the allocations agree and how far the cluster parameters are from $\mu' = C\mu + b$, $\Sigma' = C\Sigma C^\intercal$.

Every replicate owns random streams derived from the master seed and its indexes, so results do not depend on the number of workers. Replicates run in a `multiprocessing.Pool` and are collected in replicate order. A failed replicate is flagged in the `status` column and the study continues.

All fits within a replicate share the same chain streams, so differences between fits come from the data scale alone.

## Analysis pipeline
[analyze](#analyze) standardises the data, checks the robustness condition, fits the model with $B_0 \sim IW(6, 15 I)$, $m_0 \mid B_0 \sim N(0, B_0)$, $\nu_0 = 26$, $S_0 = (\nu_0 - d - 1)E[\Sigma]$ and $\alpha \sim Gamma(1, 5.26)$, and summarises the clustering: PSM, VI-optimal partition, 95% credible ball and, when reference labels are supplied, a confusion table.
"""

scenario_of_study = {"table1": "mog2d", "fig2": "mog2d", "fig4": "student_t", "prop1": "mog2d"}
failure_types = (SamplerError, ValueError, ArithmeticError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class StudySettings:
    """Replicate grid of a study.

    Parameters
    ----------
    study : {"table1", "fig2", "fig4", "prop1"}
    scale : {"desk", "paper"}
        Desk scale runs 10 replicates, paper scale 100
    seed : int
    sample_sizes, rescale_constants : tuple, optional
    replicates : int, optional
        Overrides the scale
    chain : ChainConfig, optional
    grid_steps : int, optional
    density_draws : int, optional
        Number of evenly spaced retained draws used for density estimates
    """

    study: str
    scale: str = "desk"
    seed: int = 0
    sample_sizes: tuple = constants.sample_sizes
    rescale_constants: tuple = constants.rescale_constants
    replicates: int = None
    chain: ChainConfig = field(default_factory=ChainConfig)
    grid_steps: int = None
    density_draws: int = constants.experiment_density_draws

    def __post_init__(self):
        if self.study not in constants.studies:
            raise ValueError(f"unknown study {self.study!r}; expected one of {constants.studies}")
        if self.scale not in constants.scales:
            raise ValueError(f"unknown scale {self.scale!r}; expected one of {constants.scales}")
        if self.replicates is None:
            default = constants.desk_replicates if self.scale == "desk" else constants.paper_replicates
            object.__setattr__(self, "replicates", default)
        if self.study == "prop1" and self.chain.n_iter == constants.n_iter:
            object.__setattr__(self, "chain", replace(self.chain, n_iter=constants.prop1_n_iter, burn_in=0))

    @property
    def scenario(self):
        return scenario_of_study[self.study]

    def to_dict(self):
        return {
            "study": self.study,
            "scale": self.scale,
            "seed": self.seed,
            "sample_sizes": list(self.sample_sizes),
            "rescale_constants": list(self.rescale_constants),
            "replicates": self.replicates,
            "chain": self.chain.to_dict(),
            "grid_steps": self.grid_steps,
            "density_draws": self.density_draws,
        }


@dataclass
class StudyResult:
    study: str
    replicates: pd.DataFrame
    aggregate: pd.DataFrame

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        paths = {
            "replicates": os.path.join(directory, f"{self.study}_replicates.csv"),
            "aggregate": os.path.join(directory, f"{self.study}_aggregate.csv"),
        }
        self.replicates.to_csv(paths["replicates"], index=False, float_format="%.17g")
        self.aggregate.to_csv(paths["aggregate"], index=False, float_format="%.17g")
        logging.info(f"Wrote {self.study} report to {directory}")
        return paths


def subsample_draws(draws, size):
    """At most `size` evenly spaced draws of a DrawSet."""
    if len(draws) <= size:
        return draws
    keep = np.unique(np.linspace(0, len(draws) - 1, size).round().astype(int))
    return replace(draws, draws=[draws[k] for k in keep])


def _fit_rescaled(settings, x, c, streams_path):
    pi, hyperprior, alpha = scenario_prior(settings.scenario)
    spec = ScenarioSpec(settings.scenario, len(x), c)
    streams = SamplerStreams.from_seed(settings.seed, streams_path)
    draws = run_chain(
        spec.c * x, pi, hyperprior, alpha, replace(settings.chain, seed=settings.seed), streams
    )
    return draws, spec.rescaling


def _replicate_task(task):
    """Fits the five rescaled datasets of one (replicate, n) cell."""
    settings, replicate, n_index = task
    n = settings.sample_sizes[n_index]
    path = (replicate, n_index)
    logging.info(f"{settings.study}: replicate {replicate}, n = {n}")
    x = simulate(
        ScenarioSpec(settings.scenario, n, 1.0),
        RngStream(settings.seed, constants.simulation_stream, path),
    )
    base = {"replicate": replicate, "n": n}
    try:
        fits = [_fit_rescaled(settings, x, c, path) for c in settings.rescale_constants]
        if settings.study == "table1":
            rows = []
            for c, (draws, _) in zip(settings.rescale_constants, fits):
                k = clustering.optimal_partition(draws).n_clusters
                rows.append({**base, "c": c, "n_clusters": k, "status": "ok"})
            return rows
        steps = settings.grid_steps or (
            constants.grid_steps_1d if x.shape[1] == 1 else constants.experiment_grid_steps
        )
        grid = default_grid(x, steps=steps)
        estimates = [
            rescaled_estimate(subsample_draws(draws, settings.density_draws), g, grid)
            for draws, g in fits
        ]
        distances = distance_matrix(estimates)
        return [
            {**base, "c1": c1, "c2": c2, "l1": distances[a, b], "status": "ok"}
            for a, c1 in enumerate(settings.rescale_constants)
            for b, c2 in enumerate(settings.rescale_constants)
        ]
    except failure_types as e:
        logging.warning(f"{settings.study}: replicate {replicate}, n = {n} failed: {e}")
        return [{**base, "status": f"failed: {e}"}]


def _prop1_task(task):
    """Matched-seed runs on (X, pi) and (g(X), pi_g) for one random diagonal map."""
    settings, map_index, seed_index = task
    path = (map_index, seed_index)
    seed = settings.seed + seed_index
    x = simulate(
        ScenarioSpec("mog2d", constants.prop1_n, 1.0),
        RngStream(seed, constants.simulation_stream, path),
    )
    map_rng = RngStream(settings.seed, constants.simulation_stream, (map_index,))
    g = AffineMap.diagonal(np.exp(map_rng.standard_normal(2)), 3.0 * map_rng.standard_normal(2))
    pi, _, alpha = scenario_prior("mog2d")
    config = ChainConfig(
        n_iter=settings.chain.n_iter, burn_in=0, thin=1, aux_m=settings.chain.aux_m, seed=seed
    )
    base = {"map": map_index, "seed": seed}
    try:
        original = run_chain(x, pi, None, alpha, config)
        mapped = run_chain(g(x), map_base_measure(pi, g), None, alpha, config)
    except failure_types as e:
        logging.warning(f"prop1: map {map_index}, seed {seed} failed: {e}")
        return [{**base, "status": f"failed: {e}"}]
    return [
        {**base, "iteration": a.iteration, **draw_agreement(a, b, g), "status": "ok"}
        for a, b in zip(original, mapped)
    ]


def draw_agreement(a, b, g):
    """Compares a draw on X with the matching draw on g(X).

    Returns
    -------
    dict
        `allocations_match` and the largest relative errors of mu' = C mu + b and Sigma' = C Sigma Cᵀ.
    """
    match = bool(np.array_equal(a.allocations, b.allocations))
    mu_err = sigma_err = np.nan
    if match and a.has_params:
        mu_err = sigma_err = 0.0
        for mu, sigma, mu_b, sigma_b in zip(a.means, a.covs, b.means, b.covs):
            mu_t = g.C @ mu + g.b
            sigma_t = g.C @ sigma @ g.C.T
            mu_err = max(mu_err, np.max(np.abs(mu_b - mu_t)) / max(np.max(np.abs(mu_t)), 1e-300))
            sigma_err = max(sigma_err, np.max(np.abs(sigma_b - sigma_t)) / np.max(np.abs(sigma_t)))
    return {"allocations_match": match, "mu_rel_error": mu_err, "sigma_rel_error": sigma_err}


def _map(func, tasks, workers):
    if workers is None or workers <= 1:
        return [func(t) for t in tasks]
    with mp.Pool(processes=workers) as pool:
        return pool.map(func, tasks)


def _aggregate_table1(df):
    ok = df[df["status"] == "ok"]
    table = ok.pivot_table(index="n", columns="c", values="n_clusters", aggfunc="mean")
    table.columns = [f"c={c:g}" for c in table.columns]
    return table.reset_index()


def _aggregate_distances(df):
    ok = df[df["status"] == "ok"]
    means = ok.groupby(["n", "c1", "c2"], sort=True)["l1"].mean().reset_index()
    means = means.rename(columns={"l1": "mean_l1"})
    normalized, _ = normalize_matrix(means["mean_l1"].to_numpy())
    means["normalized_l1"] = normalized
    return means


def _aggregate_prop1(df):
    ok = df[df["status"] == "ok"]
    return (
        ok.groupby(["map", "seed"], sort=True)
        .agg(
            all_match=("allocations_match", "all"),
            max_mu_rel_error=("mu_rel_error", "max"),
            max_sigma_rel_error=("sigma_rel_error", "max"),
        )
        .reset_index()
    )


def distance_matrices(aggregate, column="normalized_l1"):
    """The aggregate of a distance study as one square matrix per sample size."""
    return {
        n: group.pivot(index="c1", columns="c2", values=column)
        for n, group in aggregate.groupby("n", sort=True)
    }


def run_study(settings, workers=1):
    """Runs one study over its replicate grid.

    Parameters
    ----------
    settings : StudySettings
    workers : int, default=1
        Number of worker processes

    Returns
    -------
    StudyResult
    """
    logging.info(
        f"Starting study {settings.study} ({settings.scale}, {settings.replicates} replicates, seed {settings.seed})"
    )
    if settings.study == "prop1":
        tasks = [
            (settings, m, s)
            for m in range(constants.prop1_maps)
            for s in range(min(settings.replicates, constants.prop1_seeds))
        ]
        rows = _map(_prop1_task, tasks, workers)
    else:
        tasks = [
            (settings, r, k)
            for r in range(settings.replicates)
            for k in range(len(settings.sample_sizes))
        ]
        rows = _map(_replicate_task, tasks, workers)
    df = pd.DataFrame([row for task_rows in rows for row in task_rows])
    failed = int((df["status"] != "ok").sum())
    if failed:
        logging.warning(f"{failed} rows of study {settings.study} failed")
    if failed == len(df):
        aggregate = pd.DataFrame()
    else:
        aggregate = {
            "table1": _aggregate_table1,
            "fig2": _aggregate_distances,
            "fig4": _aggregate_distances,
            "prop1": _aggregate_prop1,
        }[settings.study](df)
    logging.info(f"Finished study {settings.study}")
    return StudyResult(settings.study, df, aggregate)


@dataclass
class AnalysisResult:
    data: np.ndarray
    standardization: AffineMap
    draws: DrawSet
    similarity: np.ndarray
    partition: clustering.Partition
    ball: clustering.CredibleBall
    robustness: object
    summary: dict
    confusion: pd.DataFrame = None

    @property
    def traces(self):
        return traces(self.draws)


def analysis_prior(d, config=None):
    """Default prior of the analysis pipeline for standardised data of dimension d.

    Returns
    -------
    tuple of (BaseMeasure, HyperPriorSpec, AlphaSpec)
    """
    settings = dict((config or {}).get("analysis", {}))
    nu0 = settings.get("nu0", constants.analysis_nu0)
    expected_sigma = settings.get("expected_sigma", constants.analysis_expected_sigma)
    s0 = scale_for_expected_sigma(nu0, expected_sigma * np.eye(d))
    hyperprior = HyperPriorSpec(
        b0_df=settings.get("b0_df", constants.analysis_b0_df),
        b0_scale=settings.get("b0_scale", constants.analysis_b0_scale) * np.eye(d),
        m0_mean=np.zeros(d),
    )
    alpha = AlphaSpec(
        "gamma", shape=constants.analysis_alpha_shape, rate=constants.analysis_alpha_rate
    )
    return hyperprior.mean_base(nu0, s0), hyperprior, alpha


def analyze(data, config=None, labels=None, chain=None, streams=None):
    """Standardise, check, fit and summarise the clustering of a dataset.

    Parameters
    ----------
    data : array-like of shape (n, d)
    config : dict, optional
        Parsed configuration. `base_measure`, `hyperprior` and `alpha` sections replace the defaults.
    labels : array-like, optional
        Reference labels for a confusion table
    chain : ChainConfig, optional
        Defaults to 20 000 iterations after 5 000 of burn-in
    streams : SamplerStreams, optional

    Returns
    -------
    AnalysisResult
    """
    config = config or {}
    z, g = standardize(data)
    n, d = z.shape
    pi, hyperprior, alpha = analysis_prior(d, config)
    pi = config_base_measure(config) or pi
    hyperprior = config_hyperprior(config) or hyperprior
    alpha = config_alpha(config) if "alpha" in config else alpha
    robustness = check_robustness_condition(pi, d)
    if not robustness:
        warnings.warn(f"robustness condition violated: {robustness.report}")
    chain = chain or ChainConfig(constants.analysis_n_iter, constants.analysis_burn_in)
    draws = run_chain(z, pi, hyperprior, alpha, chain, streams)
    similarity = clustering.psm(draws)
    partition = clustering.optimal_partition(draws, similarity)
    level = config.get("analysis", {}).get("credible_level", constants.credible_level)
    ball = clustering.credible_ball(draws, partition, level)
    alpha_mean = alpha_prior_mean(alpha)
    summary = {
        "n": n,
        "d": d,
        "alpha_prior_mean": alpha_mean,
        "prior_expected_clusters": expected_clusters(alpha_mean, n) if alpha_mean > 0 else 1.0,
        "robustness": robustness.report,
        "robustness_satisfied": robustness.satisfied,
        "n_clusters": partition.n_clusters,
        "block_sizes": clustering.block_sizes(partition).tolist(),
        "largest_block": int(clustering.largest_block(partition).sum()),
        "credible_ball": ball.report(),
        "posterior_k": {int(k): float(v) for k, v in posterior_k_distribution(draws).items()},
    }
    confusion = None if labels is None else clustering.confusion_matrix(partition, labels)
    logging.info(
        f"Analysis: {partition.n_clusters} clusters, credible ball radius {ball.radius:.4g}"
    )
    return AnalysisResult(z, g, draws, similarity, partition, ball, robustness, summary, confusion)


def default_prior(d):
    """Prior used by `fit` when the configuration has no base measure."""
    if d == 2:
        return scenario_prior("mog2d")
    if d == 1:
        return scenario_prior("student_t")
    return analysis_prior(d)
