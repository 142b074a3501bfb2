import logging
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from affine_dpm import constants
from affine_dpm.mathcore import (
    DimensionMismatchError,
    RngStream,
    SPDMatrix,
    bartlett_inverse_wishart,
    mvn_logpdf,
)
from affine_dpm.model import BaseMeasure, as_data, stick_breaking_weights

__doc__ = r"""
# Overview
Grid evaluation of posterior predictive densities and the distances used to compare fits obtained on affinely transformed data.

## Grids
A `Grid` is a rectangular lattice given by `(min, max, steps)` per axis, with points placed by `numpy.linspace`. Integrals are Riemann sums: values times the cell volume $\prod_k (max_k - min_k)/(steps_k - 1)$.

## Predictive density
For every retained draw $t$ with cluster sizes $n_j^t$, parameters $(\mu_j^t, \Sigma_j^t)$ and precision $\alpha^t$,

$$\hat f(x) = \frac{1}{T}\sum_t \left[\sum_j \frac{n_j^t}{n + \alpha^t}\phi_d(x; \mu_j^t, \Sigma_j^t) + \frac{\alpha^t}{n + \alpha^t}\hat p_0^t(x)\right]$$

where $\hat p_0^t$ averages $\phi_d$ over `aux_m` fresh draws from the base measure of draw $t$.

## Comparing rescaled fits
If $Y = g(X)$ with $g(x) = Cx + b$, then $f_X(x) = |\det C|\, f_Y(g(x))$.
[compare_rescaled](#compare_rescaled) evaluates each fit on the original scale this way and returns the $L^1$ distance (or the Hellinger distance $\{\int(\sqrt{f_1} - \sqrt{f_2})^2\}^{1/2}$, bounded by $\sqrt 2$).
[normalized_distance_matrix](#normalized_distance_matrix) divides all pairwise distances by the largest one.
"""


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """A rectangular evaluation grid.

    Parameters
    ----------
    axes : tuple of (float, float, int)
        `(min, max, steps)` for every dimension
    cap : int, default=10**6
        Maximum number of grid points
    """

    axes: tuple
    cap: int = constants.grid_cap

    def __post_init__(self):
        axes = tuple((float(lo), float(hi), int(steps)) for lo, hi, steps in self.axes)
        if not axes:
            raise ValueError("a grid needs at least one axis")
        for k, (lo, hi, steps) in enumerate(axes):
            if steps < 2:
                raise ValueError(f"axis {k} needs at least 2 steps, got {steps}")
            if not lo < hi:
                raise ValueError(f"axis {k} has min {lo} not below max {hi}")
        object.__setattr__(self, "axes", axes)
        if self.n_points > self.cap:
            raise ValueError(f"grid has {self.n_points} points, above the cap of {self.cap}")

    @property
    def dim(self):
        return len(self.axes)

    @property
    def shape(self):
        return tuple(steps for _, _, steps in self.axes)

    @property
    def n_points(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return float(np.prod([(hi - lo) / (steps - 1) for lo, hi, steps in self.axes]))

    @property
    def coords(self):
        return [np.linspace(lo, hi, steps) for lo, hi, steps in self.axes]

    def points(self):
        """All grid points, shape (n_points, d), last axis varying fastest."""
        mesh = np.meshgrid(*self.coords, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def matches(self, other, rtol=constants.grid_rtol):
        if self.shape != other.shape:
            return False
        a = np.array([(lo, hi) for lo, hi, _ in self.axes])
        b = np.array([(lo, hi) for lo, hi, _ in other.axes])
        scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1.0)
        return bool(np.all(np.abs(a - b) <= rtol * scale))

    def to_dict(self):
        return {"axes": [list(axis) for axis in self.axes], "cap": self.cap}

    @classmethod
    def from_dict(cls, config):
        return cls(
            axes=tuple(tuple(axis) for axis in config["axes"]),
            cap=config.get("cap", constants.grid_cap),
        )


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    grid: Grid
    values: np.ndarray
    mass: float

    @classmethod
    def from_values(cls, grid, values):
        values = np.asarray(values, dtype=float).reshape(grid.shape)
        if np.any(values < 0):
            raise ValueError("density values must be non-negative")
        values.setflags(write=False)
        mass = float(np.sum(values) * grid.cell_volume)
        if not 0.9 <= mass <= 1.01:
            warnings.warn(f"density mass on the grid is {mass:.4f}; the grid may be too narrow")
        return cls(grid, values, mass)


def default_grid(data, steps=None, extend=constants.grid_extend, cap=constants.grid_cap):
    """Data range extended by `extend` times the range on each side.

    Parameters
    ----------
    data : array-like of shape (n, d)
    steps : int, optional
        Points per axis. Defaults to 2000 in one dimension and 200 otherwise, reduced to respect `cap`.
    extend : float, default=0.25
    cap : int, default=10**6

    Returns
    -------
    Grid
    """
    x = as_data(data)
    d = x.shape[1]
    if steps is None:
        steps = constants.grid_steps_1d if d == 1 else constants.grid_steps
        steps = min(steps, int(np.floor(cap ** (1.0 / d))))
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return Grid(
        axes=tuple(
            (lo[k] - extend * span[k], hi[k] + extend * span[k], steps) for k in range(d)
        ),
        cap=cap,
    )


def _kernel_sum(points, weights, means, covs):
    total = np.zeros(points.shape[0])
    for w, mu, cov in zip(weights, means, covs):
        if w > 0:
            total += w * np.exp(mvn_logpdf(points, mu, cov))
    return total


def _base_density(pi, points, size, rng):
    """Average of phi_d over `size` fresh base-measure draws."""
    d = pi.dim
    means = pi.m0 + rng.standard_normal((size, d)) @ pi.B0.chol.T
    covs = bartlett_inverse_wishart(pi.nu0, np.linalg.cholesky(pi.S0.inverse()), rng, size)
    return _kernel_sum(points, np.full(size, 1.0 / size), means, covs)


def _marginal_base(pi, dims):
    d = pi.dim
    sub = np.ix_(dims, dims)
    return BaseMeasure(
        pi.m0[dims],
        pi.B0.entries[sub],
        pi.nu0 - (d - len(dims)),
        pi.S0.entries[sub],
    )


def evaluate_predictive(draws, points, rng=None, dims=None):
    """Rao-Blackwellised posterior predictive density at arbitrary points.

    Parameters
    ----------
    draws : DrawSet
    points : np.ndarray of shape (m, d)
    rng : RngStream, optional
        Stream for the new-cluster term. Defaults to the density stream of the chain seed.
    dims : list of int, optional
        Evaluate the marginal density of these coordinates

    Returns
    -------
    np.ndarray of shape (m,)
    """
    if not len(draws):
        raise ValueError("cannot estimate a density from an empty draw set")
    if not all(d.has_params for d in draws):
        raise ValueError("draws were recorded without cluster parameters")
    rng = RngStream(draws.seed, constants.density_stream) if rng is None else rng
    points = np.atleast_2d(np.asarray(points, dtype=float))
    full_dim = draws.dim
    dims = list(range(full_dim)) if dims is None else list(dims)
    if points.shape[1] != len(dims):
        raise DimensionMismatchError(
            f"points have dimension {points.shape[1]} but {len(dims)} coordinates are evaluated"
        )
    sub = np.ix_(dims, dims)
    n = draws.n
    total = np.zeros(points.shape[0])
    for draw in draws:
        denom = n + draw.alpha
        weights = draw.sizes / denom
        means = [mu[dims] for mu in draw.means]
        covs = [SPDMatrix(np.asarray(cov)[sub]) for cov in draw.covs]
        total += _kernel_sum(points, weights, means, covs)
        pi = draw.pi if len(dims) == full_dim else _marginal_base(draw.pi, dims)
        new_term = _base_density(pi, points, draws.aux_m, rng)
        if draw.alpha > 0:
            total += draw.alpha / denom * new_term
    return total / len(draws)


def predictive_density(draws, grid, rng=None):
    """Posterior predictive density on a grid.

    Parameters
    ----------
    draws : DrawSet
        Non-empty, with recorded cluster parameters
    grid : Grid
    rng : RngStream, optional

    Returns
    -------
    DensityEstimate
    """
    logging.debug(f"Evaluating predictive density of {len(draws)} draws on {grid.n_points} points")
    return DensityEstimate.from_values(grid, evaluate_predictive(draws, grid.points(), rng))


def marginal_density(draws, dims, grid, rng=None):
    """Predictive density of the coordinates `dims`, on a grid of matching dimension."""
    return DensityEstimate.from_values(grid, evaluate_predictive(draws, grid.points(), rng, dims))


def mixture_density(weights, means, covs, grid):
    """A finite Gaussian mixture evaluated on a grid."""
    weights = np.asarray(weights, dtype=float)
    if not np.isclose(weights.sum(), 1.0):
        raise ValueError(f"mixture weights sum to {weights.sum()}, not 1")
    return DensityEstimate.from_values(grid, _kernel_sum(grid.points(), weights, means, covs))


def prior_expected_density(pi, grid, n_draws, rng):
    """Monte Carlo estimate of the prior expected density, the integral of phi_d against the base measure."""
    return DensityEstimate.from_values(grid, _base_density(pi, grid.points(), n_draws, rng))


def sample_prior_density(pi, alpha, grid, truncation, rng):
    """One random density from the prior, by truncated stick-breaking."""
    weights = stick_breaking_weights(alpha, truncation, rng)
    d = pi.dim
    means = pi.m0 + rng.standard_normal((truncation, d)) @ pi.B0.chol.T
    covs = bartlett_inverse_wishart(pi.nu0, np.linalg.cholesky(pi.S0.inverse()), rng, truncation)
    return DensityEstimate.from_values(grid, _kernel_sum(grid.points(), weights, means, covs))


def map_grid(grid, g):
    """Image of a grid under a diagonal map, with the axes flipped where C is negative.

    Returns
    -------
    tuple of (Grid, list of int)
        The image grid and the axes that were reversed.
    """
    if not g.is_diagonal:
        raise ValueError("only diagonal maps send rectangular grids to rectangular grids")
    if g.dim != grid.dim:
        raise DimensionMismatchError(f"grid of dimension {grid.dim} cannot be mapped by a {g.dim}-dimensional map")
    axes, flipped = [], []
    for k, (lo, hi, steps) in enumerate(grid.axes):
        c, b = g.C[k, k], g.b[k]
        a, z = c * lo + b, c * hi + b
        if c < 0:
            a, z = z, a
            flipped.append(k)
        axes.append((a, z, steps))
    return Grid(tuple(axes), grid.cap), flipped


def pushforward_density(est, g):
    """Density of g(X) from the density of X: |det C|⁻¹ f ∘ g⁻¹ on the image grid.

    Parameters
    ----------
    est : DensityEstimate
    g : AffineMap
        Must be diagonal

    Returns
    -------
    DensityEstimate
    """
    grid, flipped = map_grid(est.grid, g)
    values = est.values / np.exp(g.logabsdet)
    if flipped:
        values = np.flip(values, axis=flipped)
    values = np.ascontiguousarray(values)
    values.setflags(write=False)
    return DensityEstimate(grid, values, float(np.sum(values) * grid.cell_volume))


def _check_grids(f1, f2):
    if not f1.grid.matches(f2.grid):
        raise GridMismatchError(f"grids differ: {f1.grid.axes} and {f2.grid.axes}")


def l1_distance(f1, f2):
    """Riemann-sum L1 distance between two densities on the same grid."""
    _check_grids(f1, f2)
    return float(np.sum(np.abs(f1.values - f2.values)) * f1.grid.cell_volume)


def hellinger(f1, f2):
    """Hellinger distance {∫(√f1 - √f2)²}^½ on the same grid, at most √2."""
    _check_grids(f1, f2)
    diff = np.sqrt(f1.values) - np.sqrt(f2.values)
    return float(np.sqrt(np.sum(diff**2) * f1.grid.cell_volume))


distances = {"l1": l1_distance, "hellinger": hellinger}


def rescaled_estimate(draws, g, grid, rng=None):
    """Predictive density of a fit to g(X), expressed on the scale of X.

    Evaluates |det C| f_Y(g(x)) at the points of `grid`, which lives on the original scale.
    """
    points = g(grid.points())
    values = np.exp(g.logabsdet) * evaluate_predictive(draws, points, rng)
    return DensityEstimate.from_values(grid, values)


def compare_rescaled(draws_a, draws_b, g_a, g_b, grid, metric="l1"):
    """Distance between two fits after mapping both back to the original data scale.

    Parameters
    ----------
    draws_a, draws_b : DrawSet
        Fits to g_a(X) and g_b(X)
    g_a, g_b : AffineMap
    grid : Grid
        Grid on the scale of X
    metric : {"l1", "hellinger"}, default="l1"

    Returns
    -------
    float
    """
    f_a = rescaled_estimate(draws_a, g_a, grid)
    f_b = rescaled_estimate(draws_b, g_b, grid)
    return distances[metric](f_a, f_b)


def distance_matrix(estimates, metric="l1"):
    """Pairwise distances between density estimates on a common grid."""
    k = len(estimates)
    out = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            out[a, b] = out[b, a] = distances[metric](estimates[a], estimates[b])
    return out


def normalize_matrix(matrix, scale=None):
    """Divides a distance matrix by `scale` (default: its maximum).

    Returns
    -------
    tuple of (np.ndarray, bool)
        The normalised matrix and whether it was identically zero.
    """
    matrix = np.asarray(matrix, dtype=float)
    scale = np.max(matrix) if scale is None else scale
    if scale <= 0:
        warnings.warn("all distances are zero; the normalised matrix is left at zero")
        return np.zeros_like(matrix), True
    return matrix / scale, False


def normalized_distance_matrix(estimates, maps=None, grid=None, metric="l1"):
    """Pairwise distances between fits, divided by the largest observed distance.

    Parameters
    ----------
    estimates : list of DrawSet or list of DensityEstimate
        Fits to g_k(X), or densities already on a common grid
    maps : list of AffineMap, optional
        The maps g_k. Required with draw sets.
    grid : Grid, optional
        Grid on the scale of X. Required with draw sets.
    metric : {"l1", "hellinger"}, default="l1"

    Returns
    -------
    tuple of (np.ndarray, bool)
        The symmetric matrix with entries in [0, 1] and zero diagonal, and the all-zero flag.
    """
    if maps is not None:
        if len(maps) != len(estimates):
            raise ValueError(f"{len(estimates)} estimates but {len(maps)} maps")
        estimates = [rescaled_estimate(e, g, grid) for e, g in zip(estimates, maps)]
    return normalize_matrix(distance_matrix(estimates, metric))


def write_density_csv(est, path):
    """One row per grid point: coordinates x1..xd, then the density value."""
    points = est.grid.points()
    df = pd.DataFrame(points, columns=[f"x{k + 1}" for k in range(est.grid.dim)])
    df["density"] = est.values.ravel()
    df.to_csv(path, index=False, float_format="%.17g")
    logging.info(f"Wrote density on {est.grid.n_points} points to {path}")


def read_density_csv(path, cap=constants.grid_cap):
    df = pd.read_csv(path, float_precision="round_trip")
    coord_cols = [c for c in df.columns if c != "density"]
    axes = []
    for col in coord_cols:
        values = np.unique(df[col].to_numpy())
        axes.append((values[0], values[-1], len(values)))
    grid = Grid(tuple(axes), cap)
    return DensityEstimate.from_values(grid, df["density"].to_numpy())
