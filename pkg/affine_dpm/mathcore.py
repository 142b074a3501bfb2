import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dpotrf
from scipy.special import logsumexp

from affine_dpm.constants import pivot_rtol, symmetry_rtol

__doc__ = r"""
# Overview
Linear-algebra and random-variate primitives shared by every other submodule.

## Symmetric positive definite matrices
Covariances ($\Sigma$, $B_0$, $S_0$ and sample covariances) are wrapped in `SPDMatrix`, which validates symmetry and caches the lower Cholesky factor.
Near-singular inputs are rejected rather than regularised: a matrix whose smallest Cholesky pivot $L_{kk}^2$ falls below `1e-12` times its largest diagonal entry raises `NotPositiveDefiniteError`.

## Random streams
All randomness flows through `RngStream`, a numpy `Generator` seeded from `(seed, stream_id, path)` via `numpy.random.SeedSequence`.
Replaying a stream from the same triple reproduces its sequence exactly, and distinct stream ids give independent sequences.

## Inverse-Wishart draws
$\Sigma \sim IW(\nu, S)$ is drawn by inverting a Bartlett-decomposed Wishart draw of $S^{-1}$.
The underlying variates are always consumed in the same order: the $d$ chi-squares of the diagonal first, then the $d(d-1)/2$ standard normals of the strict lower triangle in row-major order.
For a diagonal positive matrix $C$, a draw with scale $C S C^\intercal$ is then exactly $C \Sigma C^\intercal$ for the same variates.
"""


class NotPositiveDefiniteError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class RngStream:
    """A reproducible random stream.

    Parameters
    ----------
    seed : int
        The master seed (reduced modulo 2**64).
    stream_id : int, default=0
        Identifier of the stream derived from the master seed.
    path : tuple of int, default=()
        Extra spawn key components (e.g. replicate and condition indexes) placed before `stream_id`.
    """

    def __init__(self, seed, stream_id=0, path=()):
        self.seed = int(seed) % 2**64
        self.stream_id = int(stream_id)
        self.path = tuple(int(p) for p in path)
        self.counter = 0
        sequence = np.random.SeedSequence(
            self.seed, spawn_key=self.path + (self.stream_id,)
        )
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path}, counter={self.counter})"

    def derive(self, stream_id):
        """Returns a fresh stream sharing this stream's seed and path."""
        return RngStream(self.seed, stream_id, self.path)

    def _count(self, size):
        self.counter += 1 if size is None else int(np.prod(size))

    def uniform(self, size=None):
        self._count(size)
        return self._generator.random(size)

    def standard_normal(self, size=None):
        self._count(size)
        return self._generator.standard_normal(size)

    def chisquare(self, df, size=None):
        self._count(size)
        return self._generator.chisquare(df, size)

    def gamma(self, shape, scale=1.0, size=None):
        self._count(size)
        return self._generator.gamma(shape, scale, size)

    def beta(self, a, b, size=None):
        self._count(size)
        return self._generator.beta(a, b, size)

    def standard_t(self, df, size=None):
        self._count(size)
        return self._generator.standard_t(df, size)


def derive_streams(seed, stream_ids, path=()):
    """Builds one `RngStream` per id from a single master seed.

    Parameters
    ----------
    seed : int
        The master seed
    stream_ids : iterable of int
        The stream identifiers
    path : tuple of int, default=()
        Spawn key prefix (e.g. replicate index)

    Returns
    -------
    dict of {int: RngStream}
    """
    return {stream_id: RngStream(seed, stream_id, path) for stream_id in stream_ids}


def _as_square(m):
    a = np.array(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def _check_symmetric(a):
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    asymmetry = np.max(np.abs(a - a.T))
    if asymmetry > symmetry_rtol * scale:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asymmetry:.3g})")


def cholesky(m):
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Parameters
    ----------
    m : SPDMatrix or array-like of shape (d, d)
        The matrix to factor

    Returns
    -------
    np.ndarray
        Lower triangular `L` with positive diagonal and `L @ L.T == m`.

    Raises
    ------
    NotPositiveDefiniteError
        If a pivot is non-positive or below `1e-12` times the largest diagonal entry. The message names the failing pivot index.
    """
    if isinstance(m, SPDMatrix):
        return m.chol
    a = _as_square(m)
    _check_symmetric(a)
    chol, info = dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite: pivot {info - 1} is not positive"
        )
    if info < 0:  # pragma: no cover
        raise ValueError(f"LAPACK potrf rejected argument {-info}")
    pivots = np.diag(chol) ** 2
    smallest = int(np.argmin(pivots))
    if pivots[smallest] < pivot_rtol * np.max(np.abs(np.diag(a))):
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite: pivot {smallest} is {pivots[smallest]:.3g}, below tolerance"
        )
    return chol


class SPDMatrix:
    """A validated symmetric positive definite matrix with a cached Cholesky factor.

    Parameters
    ----------
    entries : array-like of shape (d, d) or scalar
        The matrix. Scalars become 1x1 matrices. Entries are symmetrised after validation.
    """

    __slots__ = ("entries", "chol", "_inv_chol")

    def __init__(self, entries):
        a = _as_square(entries)
        chol = cholesky(a)
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        chol.setflags(write=False)
        self.entries = a
        self.chol = chol
        self._inv_chol = None

    @property
    def dim(self):
        return self.entries.shape[0]

    @property
    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    @property
    def inv_chol(self):
        """The inverse of the lower Cholesky factor."""
        if self._inv_chol is None:
            inv = solve_triangular(self.chol, np.eye(self.dim), lower=True)
            inv.setflags(write=False)
            self._inv_chol = inv
        return self._inv_chol

    def inverse(self):
        return self.inv_chol.T @ self.inv_chol

    def congruent(self, c):
        """Returns `C M Cᵀ` as a new SPDMatrix."""
        c = np.asarray(c, dtype=float)
        return SPDMatrix(c @ self.entries @ c.T)

    def __array__(self, dtype=None, copy=None):
        return np.array(self.entries, dtype=dtype)

    def __repr__(self):
        return f"SPDMatrix({self.entries.tolist()})"


def as_spd(m):
    """Wraps `m` in an SPDMatrix unless it already is one."""
    return m if isinstance(m, SPDMatrix) else SPDMatrix(m)


def mvn_logpdf(x, mean, cov):
    """Log density of a multivariate normal.

    Parameters
    ----------
    x : array-like of shape (d,) or (m, d)
        One point or a stack of points
    mean : array-like of shape (d,)
        The mean vector
    cov : SPDMatrix or array-like of shape (d, d)
        The covariance matrix

    Returns
    -------
    float or np.ndarray of shape (m,)
    """
    cov = as_spd(cov)
    x = np.asarray(x, dtype=float)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = cov.dim
    if mean.shape != (d,) or x.shape[-1:] != (d,):
        raise DimensionMismatchError(
            f"dimensions disagree: x {x.shape}, mean {mean.shape}, cov {cov.entries.shape}"
        )
    z = solve_triangular(cov.chol, (x - mean).T, lower=True)
    maha = np.sum(z**2, axis=0)
    out = -0.5 * (d * np.log(2.0 * np.pi) + cov.logdet + maha)
    return float(out) if np.ndim(out) == 0 else out


def mvn_logpdf_batch(x, means, inv_chols, logdets):
    """Log densities of one point under K normals given their inverse Cholesky factors.

    Parameters
    ----------
    x : np.ndarray of shape (d,)
    means : np.ndarray of shape (K, d)
    inv_chols : np.ndarray of shape (K, d, d)
    logdets : np.ndarray of shape (K,)

    Returns
    -------
    np.ndarray of shape (K,)
    """
    d = x.shape[0]
    z = np.einsum("kij,kj->ki", inv_chols, x - means)
    return -0.5 * (d * np.log(2.0 * np.pi) + logdets + np.sum(z**2, axis=1))


def sample_mvn(mean, cov, rng, z=None):
    """Draws `mean + L z` with `L = cholesky(cov)` and `z` standard normal.

    Parameters
    ----------
    mean : array-like of shape (d,)
    cov : SPDMatrix or array-like of shape (d, d)
    rng : RngStream
    z : array-like of shape (d,), optional
        Recorded standard normal variates. If given, `rng` is not consumed.

    Returns
    -------
    np.ndarray of shape (d,)
    """
    cov = as_spd(cov)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if mean.shape != (cov.dim,):
        raise DimensionMismatchError(
            f"mean of shape {mean.shape} does not match covariance of dimension {cov.dim}"
        )
    if z is None:
        z = rng.standard_normal(cov.dim)
    return mean + cov.chol @ np.asarray(z, dtype=float)


def bartlett_inverse_wishart(df, inv_scale_chol, rng, size):
    """Batched inverse-Wishart draws from the Cholesky factor of the inverse scale.

    Parameters
    ----------
    df : float
        Degrees of freedom, greater than d - 1
    inv_scale_chol : np.ndarray of shape (d, d)
        Lower Cholesky factor of the inverse of the scale matrix
    rng : RngStream
    size : int
        Number of draws

    Returns
    -------
    np.ndarray of shape (size, d, d)
    """
    d = inv_scale_chol.shape[0]
    chi = rng.chisquare(df - np.arange(d), size=(size, d))
    normals = rng.standard_normal((size, d * (d - 1) // 2))
    a = np.zeros((size, d, d))
    diag = np.arange(d)
    a[:, diag, diag] = np.sqrt(chi)
    rows, cols = np.tril_indices(d, -1)
    a[:, rows, cols] = normals
    t_inv = np.linalg.inv(inv_scale_chol @ a)
    sigma = np.swapaxes(t_inv, 1, 2) @ t_inv
    return 0.5 * (sigma + np.swapaxes(sigma, 1, 2))


def sample_inv_wishart(df, scale, rng, size=None):
    """Draws from the inverse-Wishart distribution IW(df, scale), with mean `scale / (df - d - 1)`.

    Parameters
    ----------
    df : float
        Degrees of freedom, greater than d - 1
    scale : SPDMatrix or array-like of shape (d, d)
    rng : RngStream
    size : int, optional
        If given, a stacked array of `size` draws is returned instead of a single SPDMatrix.

    Returns
    -------
    SPDMatrix or np.ndarray of shape (size, d, d)
    """
    scale = as_spd(scale)
    d = scale.dim
    if not df > d - 1:
        raise ValueError(f"degrees of freedom {df} must exceed d - 1 = {d - 1}")
    inv_scale_chol = cholesky(scale.inverse())
    draws = bartlett_inverse_wishart(df, inv_scale_chol, rng, 1 if size is None else size)
    if size is None:
        return SPDMatrix(draws[0])
    return draws


def sample_gamma(shape, rate, rng, size=None):
    """Gamma draw parameterised by shape and rate (mean `shape / rate`)."""
    if shape <= 0 or rate <= 0:
        raise ValueError(f"gamma shape ({shape}) and rate ({rate}) must be positive")
    return rng.gamma(shape, 1.0 / rate, size)


def sample_beta(a, b, rng, size=None):
    """Beta(a, b) draw."""
    if a <= 0 or b <= 0:
        raise ValueError(f"beta parameters ({a}, {b}) must be positive")
    return rng.beta(a, b, size)


def log_sum_exp(values):
    """Numerically stable `log(sum(exp(values)))`."""
    values = np.asarray(values, dtype=float)
    if values.size == 0 or not np.any(np.isfinite(values)):
        raise ValueError("log_sum_exp needs at least one finite value")
    return float(logsumexp(values))


def categorical_sample(log_weights, u):
    """Inverse-CDF draw of an index from unnormalised log-weights.

    Parameters
    ----------
    log_weights : array-like of float
        Log-weights, defined up to an additive constant. `-inf` entries have zero probability.
    u : float
        A uniform variate in [0, 1)

    Returns
    -------
    int
        The smallest index whose cumulative normalised weight exceeds `u`.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u}")
    if np.any(np.isnan(log_weights)):
        raise ValueError("log-weights contain NaN")
    top = np.max(log_weights)
    if not np.isfinite(top):
        raise ValueError("all log-weights are -inf")
    cdf = np.cumsum(np.exp(log_weights - top))
    cdf /= cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))
