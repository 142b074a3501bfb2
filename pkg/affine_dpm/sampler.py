import json
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from affine_dpm import constants
from affine_dpm.mathcore import (
    SPDMatrix,
    bartlett_inverse_wishart,
    categorical_sample,
    derive_streams,
    mvn_logpdf,
    mvn_logpdf_batch,
    sample_beta,
    sample_gamma,
    sample_inv_wishart,
    sample_mvn,
)
from affine_dpm.model import (
    AlphaSpec,
    BaseMeasure,
    EmpiricalBayesRule,
    as_data,
)

__doc__ = r"""
# Overview
A marginal Gibbs sampler for the location-scale Dirichlet process mixture of Gaussians, based on the Pólya-urn representation of the mixing measure.

Every iteration performs, in order:

1. [update_allocations](#update_allocations): one sweep over the observations. Each $x_i$ is removed from its cluster and reassigned among the live clusters and `aux_m` fresh auxiliary components drawn from $P_0$. Live cluster $j$ has weight $n_{-i,j}\,\phi_d(x_i; \mu_j, \Sigma_j)$ and every auxiliary has weight $(\alpha/m)\,\phi_d(x_i; \mu_{aux}, \Sigma_{aux})$. An accepted auxiliary opens a new cluster carrying its parameters. If removing $x_i$ empties its cluster, the emptied cluster's parameters take the place of the first auxiliary.
2. [update_cluster_params](#update_cluster_params): for every cluster, $\mu_j \mid \Sigma_j \sim N(m_n, B_n)$ with $B_n = (B_0^{-1} + n_j\Sigma_j^{-1})^{-1}$ and $m_n = B_n(B_0^{-1}m_0 + n_j\Sigma_j^{-1}\bar x_j)$, then $\Sigma_j \mid \mu_j \sim IW(\nu_0 + n_j, S_0 + \sum_i (x_i - \mu_j)(x_i - \mu_j)^\intercal)$.
3. [update_hyperparams](#update_hyperparams): when a `HyperPriorSpec` is given, $(m_0, B_0)$ is drawn from its normal/inverse-Wishart conditional given the $K$ cluster locations.
4. [update_alpha](#update_alpha): when $\alpha$ has a gamma prior, the two-step Beta augmentation draws $\eta \sim Beta(\alpha + 1, n)$ and then $\alpha$ from a mixture of two gamma distributions.

## Random streams
Randomness is split over three `RngStream`s derived from one seed: allocation uniforms (exactly $n$ per sweep), parameter draws (auxiliaries for the whole sweep, drawn in one batch, then cluster refreshes) and hyperparameter/$\alpha$ draws.
Because allocation uniforms never depend on the allocation path, running the chain on $(g(X), \pi_g)$ for a diagonal positive $C$ reproduces the allocation path on $(X, \pi)$ exactly.

## Labels
Clusters are kept in creation order. Emptied clusters are removed at once and new clusters are appended.

## Output
`run_chain` returns a `DrawSet` of the retained post-burn-in, thinned snapshots. [traces](#traces) turns it into a per-iteration table and [write_draws](#write_draws) stores it as JSON lines.
"""


class SamplerError(RuntimeError):
    pass


@dataclass
class Cluster:
    mu: np.ndarray
    sigma: SPDMatrix
    size: int


@dataclass(frozen=True)
class ChainConfig:
    """Length, thinning and bookkeeping options of a chain."""

    n_iter: int = constants.n_iter
    burn_in: int = constants.burn_in
    thin: int = constants.thin
    aux_m: int = constants.aux_m
    seed: int = 0
    record_params: bool = True

    def __post_init__(self):
        if self.burn_in < 0 or self.n_iter < 0:
            raise ValueError("n_iter and burn_in must be non-negative")
        if self.burn_in > self.n_iter:
            raise ValueError(
                f"burn_in ({self.burn_in}) must not exceed n_iter ({self.n_iter})"
            )
        if self.thin < 1:
            raise ValueError(f"thin must be at least 1, got {self.thin}")
        if self.aux_m < 1:
            raise ValueError(f"aux_m must be at least 1, got {self.aux_m}")

    @property
    def n_retained(self):
        return (self.n_iter - self.burn_in) // self.thin

    def to_dict(self):
        return {
            "n_iter": self.n_iter,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "aux_m": self.aux_m,
            "seed": self.seed,
            "record_params": self.record_params,
        }

    @classmethod
    def from_dict(cls, config):
        defaults = cls()
        return cls(**{k: config.get(k, getattr(defaults, k)) for k in defaults.to_dict()})


@dataclass(frozen=True)
class SamplerStreams:
    """The three random streams a chain consumes."""

    allocation: object
    parameter: object
    hyper: object

    @classmethod
    def from_seed(cls, seed, path=()):
        streams = derive_streams(
            seed,
            (constants.allocation_stream, constants.parameter_stream, constants.hyper_stream),
            path,
        )
        return cls(
            allocation=streams[constants.allocation_stream],
            parameter=streams[constants.parameter_stream],
            hyper=streams[constants.hyper_stream],
        )


@dataclass
class ChainState:
    allocations: np.ndarray
    clusters: list
    pi: BaseMeasure
    alpha: float
    alpha_spec: AlphaSpec = field(default_factory=AlphaSpec)
    hyperprior: object = None
    iteration: int = 0

    @property
    def n_clusters(self):
        return len(self.clusters)

    def copy(self):
        return replace(
            self,
            allocations=self.allocations.copy(),
            clusters=[Cluster(c.mu.copy(), c.sigma, c.size) for c in self.clusters],
        )

    def check(self, n):
        """Raises if the partition bookkeeping is inconsistent."""
        sizes = np.bincount(self.allocations, minlength=len(self.clusters))
        if len(sizes) != len(self.clusters) or sizes.sum() != n:
            raise SamplerError(f"allocations do not index {len(self.clusters)} live clusters")
        if np.any(sizes == 0) or np.any(sizes != [c.size for c in self.clusters]):
            raise SamplerError("cluster sizes disagree with allocations")


@dataclass(frozen=True)
class Draw:
    """A retained snapshot of the chain."""

    iteration: int
    alpha: float
    allocations: np.ndarray
    means: tuple
    covs: tuple
    pi: BaseMeasure

    @property
    def n_clusters(self):
        return int(self.allocations.max()) + 1

    @property
    def sizes(self):
        return np.bincount(self.allocations, minlength=self.n_clusters)

    @property
    def has_params(self):
        return len(self.means) > 0


@dataclass
class DrawSet:
    draws: list
    data: np.ndarray = None
    config: ChainConfig = field(default_factory=ChainConfig)

    def __len__(self):
        return len(self.draws)

    def __iter__(self):
        return iter(self.draws)

    def __getitem__(self, item):
        return self.draws[item]

    @property
    def seed(self):
        return self.config.seed

    @property
    def aux_m(self):
        return self.config.aux_m

    @property
    def n(self):
        if self.draws:
            return len(self.draws[0].allocations)
        return 0 if self.data is None else self.data.shape[0]

    @property
    def dim(self):
        if self.draws:
            return self.draws[0].pi.dim
        return self.data.shape[1]

    def allocation_matrix(self):
        """Retained allocations stacked as an array of shape (n_draws, n)."""
        if not self.draws:
            raise ValueError("the draw set is empty")
        return np.stack([d.allocations for d in self.draws])


def _conditional_params(x, sigma, pi):
    """Parameters (m_n, B_n) of mu | Sigma given the member observations x."""
    n_j = x.shape[0]
    b0_prec = pi.B0.inverse()
    sigma_prec = sigma.inverse()
    precision = SPDMatrix(b0_prec + n_j * sigma_prec)
    cov = SPDMatrix(precision.inverse())
    mean = cov.entries @ (b0_prec @ pi.m0 + sigma_prec @ x.sum(axis=0))
    return mean, cov


def _draw_cluster(x, sigma, pi, rng):
    """One refresh of (mu, Sigma) for a cluster whose members are x."""
    mean, cov = _conditional_params(x, sigma, pi)
    mu = sample_mvn(mean, cov, rng)
    resid = x - mu
    scale = pi.S0.entries + resid.T @ resid
    return mu, sample_inv_wishart(pi.nu0 + x.shape[0], scale, rng)


def init_state(data, pi, hyperprior=None, alpha_spec=None, streams=None, seed=0):
    """All observations in one cluster with (mu, Sigma) drawn from its conditional posterior.

    Parameters
    ----------
    data : array-like of shape (n, d)
    pi : BaseMeasure or EmpiricalBayesRule
        Used as given unless a hyperprior is present, in which case (m0, B0) start at the hyperprior mean.
    hyperprior : HyperPriorSpec, optional
    alpha_spec : AlphaSpec, optional
        Fixed alpha by default. A gamma prior starts at its mean.
    streams : SamplerStreams, optional
        Defaults to streams derived from `seed`. Only the parameter stream is consumed.

    Returns
    -------
    ChainState
    """
    x = as_data(data)
    if isinstance(pi, EmpiricalBayesRule):
        pi = pi.resolve(x)
    if hyperprior is not None:
        pi = hyperprior.mean_base(pi.nu0, pi.S0)
    alpha_spec = AlphaSpec() if alpha_spec is None else alpha_spec
    streams = SamplerStreams.from_seed(seed) if streams is None else streams
    if x.shape[1] != pi.dim:
        raise ValueError(f"data have dimension {x.shape[1]} but the base measure {pi.dim}")
    # Sigma is drawn from the prior first, then the cluster gets a conditional refresh
    sigma = sample_inv_wishart(pi.nu0, pi.S0, streams.parameter)
    mu, sigma = _draw_cluster(x, sigma, pi, streams.parameter)
    return ChainState(
        allocations=np.zeros(x.shape[0], dtype=int),
        clusters=[Cluster(mu, sigma, x.shape[0])],
        pi=pi,
        alpha=float(alpha_spec.prior_mean),
        alpha_spec=alpha_spec,
        hyperprior=hyperprior,
    )


def draw_auxiliaries(pi, size, rng):
    """Batch of `size` (mu, Sigma) pairs from the base measure.

    Returns
    -------
    tuple of np.ndarray
        Means (size, d), covariances (size, d, d), inverse Cholesky factors (size, d, d) and log-determinants (size,).
    """
    d = pi.dim
    means = pi.m0 + rng.standard_normal((size, d)) @ pi.B0.chol.T
    covs = bartlett_inverse_wishart(pi.nu0, np.linalg.cholesky(pi.S0.inverse()), rng, size)
    chols = np.linalg.cholesky(covs)
    inv_chols = np.linalg.inv(chols)
    logdets = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
    return means, covs, inv_chols, logdets


def update_allocations(state, data, streams, aux_m=constants.aux_m, inplace=False):
    """One auxiliary-component allocation sweep over all observations.

    Parameters
    ----------
    state : ChainState
    data : np.ndarray of shape (n, d)
    streams : SamplerStreams
        Consumes n uniforms from the allocation stream and n * aux_m base-measure draws from the parameter stream.
    aux_m : int, default=3
        Number of auxiliary components per observation
    inplace : bool, default=False
        Whether to update `state` in place or work on a copy

    Returns
    -------
    ChainState
    """
    if not inplace:
        state = state.copy()
    x = as_data(data)
    n, d = x.shape
    u = streams.allocation.uniform(n)
    aux_means, aux_covs, aux_inv_chols, aux_logdets = draw_auxiliaries(
        state.pi, n * aux_m, streams.parameter
    )
    log_new = np.log(state.alpha / aux_m) if state.alpha > 0 else -np.inf

    means = np.array([c.mu for c in state.clusters])
    covs = [c.sigma for c in state.clusters]
    inv_chols = np.array([c.sigma.inv_chol for c in state.clusters])
    logdets = np.array([c.sigma.logdet for c in state.clusters])
    sizes = np.array([c.size for c in state.clusters])
    labels = state.allocations

    for i in range(n):
        j = labels[i]
        block = slice(i * aux_m, (i + 1) * aux_m)
        a_means = aux_means[block]
        a_covs = aux_covs[block]
        a_inv = aux_inv_chols[block]
        a_logdets = aux_logdets[block]
        sizes[j] -= 1
        if sizes[j] == 0:
            if log_new == -np.inf:
                # no other cluster can absorb x_i when new clusters are disallowed
                sizes[j] += 1
                continue
            a_means = a_means.copy()
            a_covs = a_covs.copy()
            a_inv = a_inv.copy()
            a_logdets = a_logdets.copy()
            a_means[0], a_covs[0] = means[j], covs[j].entries
            a_inv[0], a_logdets[0] = inv_chols[j], logdets[j]
            means = np.delete(means, j, axis=0)
            inv_chols = np.delete(inv_chols, j, axis=0)
            logdets = np.delete(logdets, j)
            sizes = np.delete(sizes, j)
            del covs[j]
            labels[labels > j] -= 1
        live = np.log(sizes) + mvn_logpdf_batch(x[i], means, inv_chols, logdets)
        aux = log_new + mvn_logpdf_batch(x[i], a_means, a_inv, a_logdets)
        k = categorical_sample(np.concatenate([live, aux]), u[i])
        if k < len(sizes):
            labels[i] = k
            sizes[k] += 1
        else:
            a = k - len(sizes)
            labels[i] = len(sizes)
            means = np.vstack([means, a_means[a]])
            inv_chols = np.concatenate([inv_chols, a_inv[a : a + 1]])
            logdets = np.append(logdets, a_logdets[a])
            sizes = np.append(sizes, 1)
            covs.append(SPDMatrix(a_covs[a]))

    covs = [c if isinstance(c, SPDMatrix) else SPDMatrix(c) for c in covs]
    state.allocations = labels
    state.clusters = [
        Cluster(means[j].copy(), covs[j], int(sizes[j])) for j in range(len(sizes))
    ]
    return state


def update_cluster_params(state, data, streams, inplace=False):
    """Refreshes (mu, Sigma) of every live cluster from its conditional posterior.

    Parameters
    ----------
    state : ChainState
    data : np.ndarray of shape (n, d)
    streams : SamplerStreams
        Consumes the parameter stream, clusters in label order.
    inplace : bool, default=False
        Whether to update `state` in place or work on a copy

    Returns
    -------
    ChainState
    """
    if not inplace:
        state = state.copy()
    x = as_data(data)
    for j, cluster in enumerate(state.clusters):
        members = x[state.allocations == j]
        cluster.mu, cluster.sigma = _draw_cluster(
            members, cluster.sigma, state.pi, streams.parameter
        )
    return state


def hyperprior_posterior(spec, locations):
    """Normal/inverse-Wishart posterior of (m0, B0) given K cluster locations.

    Parameters
    ----------
    spec : HyperPriorSpec
    locations : np.ndarray of shape (K, d)

    Returns
    -------
    tuple
        (mean, kappa, df, scale): B0 ~ IW(df, scale) and m0 | B0 ~ N(mean, B0 / kappa).
    """
    locations = np.atleast_2d(locations)
    k = locations.shape[0]
    kappa = spec.kappa0 + k
    mu_bar = locations.mean(axis=0)
    mean = (spec.kappa0 * spec.m0_mean + k * mu_bar) / kappa
    centered = locations - mu_bar
    offset = (mu_bar - spec.m0_mean)[:, None]
    scale = (
        spec.b0_scale.entries
        + centered.T @ centered
        + spec.kappa0 * k / kappa * (offset @ offset.T)
    )
    return mean, kappa, spec.b0_df + k, SPDMatrix(scale)


def update_hyperparams(state, streams, inplace=False):
    """Draws (m0, B0) given the cluster locations. The identity when there is no hyperprior."""
    if state.hyperprior is None:
        return state
    if not inplace:
        state = state.copy()
    locations = np.array([c.mu for c in state.clusters])
    mean, kappa, df, scale = hyperprior_posterior(state.hyperprior, locations)
    b0 = sample_inv_wishart(df, scale, streams.hyper)
    m0 = sample_mvn(mean, SPDMatrix(b0.entries / kappa), streams.hyper)
    state.pi = BaseMeasure(m0, b0, state.pi.nu0, state.pi.S0)
    return state


def update_alpha(state, n, streams, inplace=False):
    """Escobar-West update of the precision parameter under a Gamma(shape, rate) prior.

    Parameters
    ----------
    state : ChainState
    n : int
        Number of observations
    streams : SamplerStreams
        Consumes one Beta, one uniform and one gamma variate from the hyper stream.
    inplace : bool, default=False

    Returns
    -------
    ChainState
        Unchanged when alpha is fixed.
    """
    spec = state.alpha_spec
    if spec.mode == "fixed":
        return state
    if not inplace:
        state = state.copy()
    k = state.n_clusters
    eta = sample_beta(state.alpha + 1.0, n, streams.hyper)
    rate = spec.rate - np.log(max(eta, np.finfo(float).tiny))
    odds = (spec.shape + k - 1.0) / (n * rate)
    weight = odds / (1.0 + odds)
    shape = spec.shape + k if streams.hyper.uniform() < weight else spec.shape + k - 1.0
    state.alpha = float(sample_gamma(shape, rate, streams.hyper))
    return state


def _snapshot(state, record_params):
    if record_params:
        means = tuple(c.mu.copy() for c in state.clusters)
        covs = tuple(c.sigma.entries.copy() for c in state.clusters)
    else:
        means, covs = (), ()
    return Draw(
        iteration=state.iteration,
        alpha=state.alpha,
        allocations=state.allocations.copy(),
        means=means,
        covs=covs,
        pi=state.pi,
    )


def run_chain(
    data,
    pi,
    hyperprior=None,
    alpha_spec=None,
    config=None,
    streams=None,
    callback=None,
):
    """Runs the Gibbs sampler and keeps the post-burn-in thinned draws.

    Parameters
    ----------
    data : array-like of shape (n, d)
        The observations
    pi : BaseMeasure or EmpiricalBayesRule
        The base measure, or a rule resolving it from `data`
    hyperprior : HyperPriorSpec, optional
        Makes (m0, B0) random
    alpha_spec : AlphaSpec, optional
        Defaults to a fixed alpha of 1
    config : ChainConfig, optional
        Defaults to ChainConfig()
    streams : SamplerStreams, optional
        Defaults to streams derived from `config.seed`
    callback : callable, optional
        Called as `callback(state)` after every iteration

    Returns
    -------
    DrawSet

    Raises
    ------
    SamplerError
        If a numeric failure happens inside an iteration. The message names the iteration.
    """
    x = as_data(data)
    config = ChainConfig() if config is None else config
    streams = SamplerStreams.from_seed(config.seed) if streams is None else streams
    if isinstance(pi, EmpiricalBayesRule):
        pi = pi.resolve(x)
    n = x.shape[0]
    logging.info(
        f"Running chain: n = {n}, d = {x.shape[1]}, {config.n_iter} iterations, burn-in {config.burn_in}, seed {config.seed}"
    )
    if config.n_retained == 0:
        warnings.warn(
            f"no draws will be retained (n_iter = {config.n_iter}, burn_in = {config.burn_in}, thin = {config.thin})"
        )
    state = init_state(x, pi, hyperprior, alpha_spec, streams)
    draws = []
    progress = max(1, config.n_iter // 10)
    for t in range(1, config.n_iter + 1):
        try:
            update_allocations(state, x, streams, config.aux_m, inplace=True)
            update_cluster_params(state, x, streams, inplace=True)
            update_hyperparams(state, streams, inplace=True)
            update_alpha(state, n, streams, inplace=True)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
            raise SamplerError(f"chain failed at iteration {t}: {e}") from e
        state.iteration = t
        if t > config.burn_in and (t - config.burn_in) % config.thin == 0:
            draws.append(_snapshot(state, config.record_params))
        if callback is not None:
            callback(state)
        if t % progress == 0:
            logging.debug(f"iteration {t}: K = {state.n_clusters}, alpha = {state.alpha:.4g}")
    return DrawSet(draws=draws, data=x, config=config)


def log_likelihood(draw, data):
    """sum_i log phi_d(x_i; mu_{c_i}, Sigma_{c_i}) for one draw."""
    if not draw.has_params:
        raise ValueError("draw has no recorded cluster parameters")
    x = as_data(data)
    total = 0.0
    for j, (mu, sigma) in enumerate(zip(draw.means, draw.covs)):
        total += float(np.sum(mvn_logpdf(x[draw.allocations == j], mu, sigma)))
    return total


def traces(draws):
    """Per-draw trace table.

    Parameters
    ----------
    draws : DrawSet

    Returns
    -------
    pd.DataFrame
        Columns `iteration`, `n_clusters`, `alpha` and, when data and parameters are available, `log_likelihood`.
    """
    df = pd.DataFrame(
        {
            "iteration": [d.iteration for d in draws],
            "n_clusters": [d.n_clusters for d in draws],
            "alpha": [d.alpha for d in draws],
        }
    )
    if draws.data is not None and all(d.has_params for d in draws):
        df["log_likelihood"] = [log_likelihood(d, draws.data) for d in draws]
    return df


def posterior_k_distribution(draws):
    """Relative frequency of the number of clusters over the retained draws."""
    if not len(draws):
        raise ValueError("the draw set is empty")
    counts = pd.Series([d.n_clusters for d in draws], name="n_clusters").value_counts()
    freq = (counts / counts.sum()).sort_index()
    freq.index.name = "n_clusters"
    freq.name = "frequency"
    return freq


def draw_to_record(draw):
    return {
        "iter": draw.iteration,
        "alpha": draw.alpha,
        "K": draw.n_clusters,
        "allocations": draw.allocations.tolist(),
        "clusters": [
            {"mu": mu.tolist(), "sigma": np.asarray(sigma).tolist()}
            for mu, sigma in zip(draw.means, draw.covs)
        ],
        "pi": draw.pi.to_dict(),
    }


def record_to_draw(record):
    clusters = record.get("clusters", [])
    return Draw(
        iteration=int(record["iter"]),
        alpha=float(record["alpha"]),
        allocations=np.array(record["allocations"], dtype=int),
        means=tuple(np.array(c["mu"], dtype=float) for c in clusters),
        covs=tuple(np.array(c["sigma"], dtype=float) for c in clusters),
        pi=BaseMeasure.from_dict(record["pi"]),
    )


def write_draws(draws, path):
    """Writes one JSON record per retained draw."""
    with open(path, "w") as f:
        for draw in draws:
            f.write(json.dumps(draw_to_record(draw)) + "\n")
    logging.info(f"Wrote {len(draws)} draws to {path}")


def read_draws(path, data=None, config=None):
    """Reads a DrawSet written by `write_draws`."""
    with open(path) as f:
        draws = [record_to_draw(json.loads(line)) for line in f if line.strip()]
    return DrawSet(
        draws=draws,
        data=None if data is None else as_data(data),
        config=ChainConfig() if config is None else config,
    )
