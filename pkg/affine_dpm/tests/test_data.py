# Shared data and oracles for the affine_dpm tests
import itertools

import numpy as np
from scipy import integrate, special, stats

from affine_dpm.mathcore import RngStream
from affine_dpm.model import AffineMap

s1 = np.array([[1.0, 0.85], [0.85, 1.0]])

# Two well separated bivariate groups of five points
two_groups = np.array(
    [
        [-2.1, -1.9],
        [-2.0, -2.2],
        [-1.8, -2.0],
        [-2.2, -2.1],
        [-1.9, -1.8],
        [2.0, 2.1],
        [2.2, 1.9],
        [1.9, 2.0],
        [2.1, 2.2],
        [1.8, 1.9],
    ]
)

tiny_1d = np.array([[-1.2], [-0.9], [0.1], [1.4], [1.6]])


def random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + d * np.eye(d)


def random_invertible(rng, d):
    while True:
        c = rng.standard_normal((d, d))
        if abs(np.linalg.det(c)) > 0.2:
            return AffineMap(c, rng.standard_normal(d))


def random_diagonal(rng, d):
    return AffineMap.diagonal(np.exp(rng.standard_normal(d)), rng.standard_normal(d))


def rng_for(test_seed, stream_id=0):
    return RngStream(test_seed, stream_id)


def energy_distance_test(x, y, rng, permutations=200):
    """Two-sample energy-distance permutation test; returns the p-value."""
    pooled = np.vstack([x, y])
    n = len(x)
    dist = np.linalg.norm(pooled[:, None, :] - pooled[None, :, :], axis=2)

    def statistic(labels):
        a, b = labels[:n], labels[n:]
        return 2 * dist[np.ix_(a, b)].mean() - dist[np.ix_(a, a)].mean() - dist[np.ix_(b, b)].mean()

    index = np.arange(len(pooled))
    observed = statistic(index)
    count = 0
    for _ in range(permutations):
        perm = np.argsort(rng.uniform(len(pooled)))
        count += statistic(perm) >= observed
    return (count + 1) / (permutations + 1)


def set_partitions(n):
    """All set partitions of range(n) as canonical label tuples."""
    def extend(prefix, k):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for label in range(k + 1):
            yield from extend(prefix + [label], max(k, label + 1))

    yield from extend([0], 1)


def block_log_marginal(x, m0, b0, nu0, s0):
    """log of ∫∫ prod_i N(x_i; mu, s2) N(mu; m0, b0) IG(s2; nu0/2, s0/2) dmu ds2 for 1-d data."""
    x = np.asarray(x, dtype=float).ravel()
    n = len(x)

    def integrand(s2):
        # mu integrated analytically given s2
        prec = 1.0 / b0 + n / s2
        mean = (m0 / b0 + x.sum() / s2) / prec
        log_mu = (
            -0.5 * n * np.log(2 * np.pi * s2)
            - 0.5 * np.log(b0 * prec)
            - 0.5 * (np.sum(x**2) / s2 + m0**2 / b0 - prec * mean**2)
        )
        log_prior = stats.invgamma.logpdf(s2, a=nu0 / 2, scale=s0 / 2)
        return np.exp(log_mu + log_prior)

    value, _ = integrate.quad(integrand, 0, np.inf, limit=200)
    return np.log(value)


def exact_partition_posterior(x, alpha, m0, b0, nu0, s0):
    """Exact posterior over all set partitions of a tiny 1-d dataset."""
    x = np.asarray(x, dtype=float).ravel()
    n = len(x)
    partitions = list(set_partitions(n))
    log_post = []
    for labels in partitions:
        labels = np.array(labels)
        k = labels.max() + 1
        sizes = np.bincount(labels)
        log_prior = k * np.log(alpha) + np.sum(special.gammaln(sizes)) - np.sum(
            np.log(alpha + np.arange(n))
        )
        log_lik = sum(block_log_marginal(x[labels == j], m0, b0, nu0, s0) for j in range(k))
        log_post.append(log_prior + log_lik)
    log_post = np.array(log_post)
    weights = np.exp(log_post - special.logsumexp(log_post))
    return dict(zip(partitions, weights))


def normal_grid_density(mean, var, lo=-30.0, hi=30.0, steps=60001):
    from affine_dpm.density import DensityEstimate, Grid

    grid = Grid(((lo, hi, steps),))
    values = stats.norm.pdf(grid.coords[0], loc=mean, scale=np.sqrt(var))
    return DensityEstimate.from_values(grid, values)


def all_pairs(items):
    return list(itertools.combinations(items, 2))
