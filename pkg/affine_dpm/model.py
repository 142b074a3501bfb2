import logging
from dataclasses import dataclass

import numpy as np

from affine_dpm.constants import singular_map_rtol
from affine_dpm.mathcore import (
    DimensionMismatchError,
    NotPositiveDefiniteError,
    SPDMatrix,
    as_spd,
    sample_beta,
    sample_inv_wishart,
)

__doc__ = r"""
# Overview
Model configuration for location-scale Dirichlet process mixtures of Gaussians and the tools that relate a model fitted to $X$ with a model fitted to an affine image $g(X) = CX + b$.

## Base measure
The base measure is $P_0 = N_d(m_0, B_0) \times IW(\nu_0, S_0)$, stored as a `BaseMeasure` holding $\pi = (m_0, B_0, \nu_0, S_0)$. The inverse-Wishart uses the parameterisation with $E[\Sigma] = S_0/(\nu_0 - d - 1)$, so $\nu_0 > d + 1$ is required.

## Transforming hyperparameters
[map_base_measure](#map_base_measure) returns $\pi_g = (C m_0 + b, C B_0 C^\intercal, \nu_0, C S_0 C^\intercal)$. Fitting $(g(X), \pi_g)$ gives the same posterior as fitting $(X, \pi)$ pushed through $g$.
[empirical_bayes](#empirical_bayes) sets $m_0 = \bar X$, $B_0 = S_X^2/\gamma_1$ and $S_0 = (\nu_0 - d - 1) S_X^2/\gamma_2$, which commutes with `map_base_measure` because $S^2_{g(X)} = C S_X^2 C^\intercal$.

## Robustness condition
Large-sample robustness to affine maps holds when $\nu_0 > (d + 1)(2d - 3)$; [check_robustness_condition](#check_robustness_condition) reports the threshold.

## Inverse-gamma bases
In one dimension $IG(a_0, b_0)$ is the same distribution as $IW(2a_0, 2b_0)$, so univariate models are expressed as 1x1 inverse-Wishart bases ([inverse_gamma_to_wishart](#inverse_gamma_to_wishart)).
"""


class DegenerateDataError(ValueError):
    pass


class SingularMapError(ValueError):
    pass


def _vector(values, name):
    v = np.atleast_1d(np.array(values, dtype=float))
    if v.ndim != 1:
        raise DimensionMismatchError(f"{name} must be a vector, got shape {v.shape}")
    v.setflags(write=False)
    return v


@dataclass(frozen=True, eq=False)
class BaseMeasure:
    """Hyperparameters (m0, B0, nu0, S0) of the normal x inverse-Wishart base measure."""

    m0: np.ndarray
    B0: SPDMatrix
    nu0: float
    S0: SPDMatrix

    def __post_init__(self):
        object.__setattr__(self, "m0", _vector(self.m0, "m0"))
        object.__setattr__(self, "B0", as_spd(self.B0))
        object.__setattr__(self, "S0", as_spd(self.S0))
        object.__setattr__(self, "nu0", float(self.nu0))
        d = self.m0.shape[0]
        if self.B0.dim != d or self.S0.dim != d:
            raise DimensionMismatchError(
                f"m0 has dimension {d} but B0 is {self.B0.dim}x{self.B0.dim} and S0 is {self.S0.dim}x{self.S0.dim}"
            )
        if not self.nu0 > d + 1:
            raise ValueError(f"nu0 = {self.nu0} must exceed d + 1 = {d + 1}")

    @property
    def dim(self):
        return self.m0.shape[0]

    @property
    def expected_sigma(self):
        return self.S0.entries / (self.nu0 - self.dim - 1)

    def to_dict(self):
        return {
            "m0": self.m0.tolist(),
            "B0": self.B0.entries.tolist(),
            "nu0": self.nu0,
            "S0": self.S0.entries.tolist(),
        }

    @classmethod
    def from_dict(cls, config):
        return cls(
            m0=config["m0"], B0=config["B0"], nu0=config["nu0"], S0=config["S0"]
        )

    def allclose(self, other, rtol=1e-10, atol=0.0):
        return (
            self.dim == other.dim
            and np.isclose(self.nu0, other.nu0, rtol=rtol, atol=atol)
            and np.allclose(self.m0, other.m0, rtol=rtol, atol=atol)
            and np.allclose(self.B0.entries, other.B0.entries, rtol=rtol, atol=atol)
            and np.allclose(self.S0.entries, other.S0.entries, rtol=rtol, atol=atol)
        )


@dataclass(frozen=True, eq=False)
class AffineMap:
    """An invertible affine map g(x) = C x + b."""

    C: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        c = np.array(self.C, dtype=float)
        if c.ndim == 0:
            c = c.reshape(1, 1)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DimensionMismatchError(f"C must be square, got shape {c.shape}")
        b = _vector(self.b, "b")
        if b.shape[0] != c.shape[0]:
            raise DimensionMismatchError(
                f"b has dimension {b.shape[0]} but C is {c.shape[0]}x{c.shape[0]}"
            )
        d = c.shape[0]
        sign, logabsdet = np.linalg.slogdet(c)
        scale = np.max(np.abs(c))
        if sign == 0 or scale == 0 or logabsdet < np.log(singular_map_rtol) + d * np.log(scale):
            raise SingularMapError("C is singular: an affine map must be a bijection")
        c.setflags(write=False)
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "logabsdet", float(logabsdet))

    @property
    def dim(self):
        return self.b.shape[0]

    @property
    def is_diagonal(self):
        return bool(np.all(self.C == np.diag(np.diag(self.C))))

    def __call__(self, x):
        return apply_affine(x, self)

    def to_dict(self):
        return {"C": self.C.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, config):
        return cls(C=config["C"], b=config["b"])

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d), np.zeros(d))

    @classmethod
    def scaling(cls, c, d):
        """The rescaling x -> c x used by the simulation studies."""
        return cls(c * np.eye(d), np.zeros(d))

    @classmethod
    def diagonal(cls, scales, shift=None):
        scales = np.atleast_1d(np.asarray(scales, dtype=float))
        shift = np.zeros(len(scales)) if shift is None else shift
        return cls(np.diag(scales), shift)


@dataclass(frozen=True, eq=False)
class HyperPriorSpec:
    """Normal/inverse-Wishart hyperprior: B0 ~ IW(b0_df, b0_scale) and m0 | B0 ~ N(m0_mean, B0 / kappa0)."""

    b0_df: float
    b0_scale: SPDMatrix
    m0_mean: np.ndarray
    kappa0: float = 1.0
    m0_cov_is_B0: bool = True

    def __post_init__(self):
        object.__setattr__(self, "b0_scale", as_spd(self.b0_scale))
        object.__setattr__(self, "m0_mean", _vector(self.m0_mean, "m0_mean"))
        object.__setattr__(self, "b0_df", float(self.b0_df))
        d = self.m0_mean.shape[0]
        if self.b0_scale.dim != d:
            raise DimensionMismatchError(
                f"m0_mean has dimension {d} but b0_scale is {self.b0_scale.dim}x{self.b0_scale.dim}"
            )
        if not self.b0_df > d + 1:
            raise ValueError(f"b0_df = {self.b0_df} must exceed d + 1 = {d + 1}")
        if self.kappa0 <= 0:
            raise ValueError(f"kappa0 must be positive, got {self.kappa0}")
        if not self.m0_cov_is_B0:
            raise ValueError("only m0 | B0 ~ N(m0_mean, B0 / kappa0) is supported")

    @property
    def dim(self):
        return self.m0_mean.shape[0]

    def mean_base(self, nu0, S0):
        """A BaseMeasure with (m0, B0) at their hyperprior means."""
        b0_mean = self.b0_scale.entries / (self.b0_df - self.dim - 1)
        return BaseMeasure(self.m0_mean, b0_mean, nu0, S0)

    def to_dict(self):
        return {
            "b0_df": self.b0_df,
            "b0_scale": self.b0_scale.entries.tolist(),
            "m0_mean": self.m0_mean.tolist(),
            "kappa0": self.kappa0,
        }

    @classmethod
    def from_dict(cls, config):
        return cls(
            b0_df=config["b0_df"],
            b0_scale=config["b0_scale"],
            m0_mean=config["m0_mean"],
            kappa0=config.get("kappa0", 1.0),
        )


@dataclass(frozen=True)
class AlphaSpec:
    """Precision parameter of the Dirichlet process: fixed, or with a Gamma(shape, rate) prior."""

    mode: str = "fixed"
    value: float = 1.0
    shape: float = 1.0
    rate: float = 1.0

    def __post_init__(self):
        if self.mode not in ("fixed", "gamma"):
            raise ValueError(f"alpha mode must be 'fixed' or 'gamma', got {self.mode!r}")
        if self.mode == "fixed" and self.value < 0:
            raise ValueError(f"fixed alpha must be non-negative, got {self.value}")
        if self.mode == "gamma" and (self.shape <= 0 or self.rate <= 0):
            raise ValueError(
                f"gamma prior shape ({self.shape}) and rate ({self.rate}) must be positive"
            )

    @property
    def prior_mean(self):
        return self.value if self.mode == "fixed" else self.shape / self.rate

    def to_dict(self):
        if self.mode == "fixed":
            return {"mode": "fixed", "value": self.value}
        return {"mode": "gamma", "shape": self.shape, "rate": self.rate}

    @classmethod
    def from_dict(cls, config):
        if isinstance(config, (int, float)):
            return cls(mode="fixed", value=float(config))
        return cls(
            mode=config.get("mode", "fixed"),
            value=config.get("value", 1.0),
            shape=config.get("shape", 1.0),
            rate=config.get("rate", 1.0),
        )


@dataclass(frozen=True)
class EmpiricalBayesRule:
    """Deferred empirical-Bayes choice of the base measure, resolved on the data being fitted."""

    gamma1: float
    gamma2: float
    nu0: float

    def resolve(self, data):
        return empirical_bayes(data, self.gamma1, self.gamma2, self.nu0)

    def to_dict(self):
        return {"gamma1": self.gamma1, "gamma2": self.gamma2, "nu0": self.nu0}


@dataclass(frozen=True)
class RobustnessCheck:
    satisfied: bool
    d: int
    nu0: float
    threshold: float
    report: str

    def __bool__(self):
        return self.satisfied


def as_data(data):
    """Coerces observations into a float array of shape (n, d)."""
    x = np.array(data, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2:
        raise DimensionMismatchError(f"data must be an n x d matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("data contain non-finite values")
    return x


def apply_affine(data, g):
    """Applies g(x) = C x + b to every row of `data`.

    Parameters
    ----------
    data : array-like of shape (n, d) or (d,)
    g : AffineMap

    Returns
    -------
    np.ndarray
        The transformed data, with the same shape as the input.
    """
    x = np.asarray(data, dtype=float)
    if x.shape[-1:] != (g.dim,):
        raise DimensionMismatchError(
            f"data of shape {x.shape} cannot be mapped by a {g.dim}-dimensional map"
        )
    return x @ g.C.T + g.b


def invert(g):
    """The inverse map g⁻¹(y) = C⁻¹(y - b)."""
    c_inv = np.linalg.inv(g.C)
    return AffineMap(c_inv, -c_inv @ g.b)


def compose(g2, g1):
    """The composition g2 ∘ g1."""
    if g1.dim != g2.dim:
        raise DimensionMismatchError(f"cannot compose maps of dimension {g2.dim} and {g1.dim}")
    return AffineMap(g2.C @ g1.C, g2.C @ g1.b + g2.b)


def map_base_measure(pi, g):
    """Pushes the hyperparameters through g: (C m0 + b, C B0 Cᵀ, nu0, C S0 Cᵀ).

    Parameters
    ----------
    pi : BaseMeasure
    g : AffineMap

    Returns
    -------
    BaseMeasure
    """
    if pi.dim != g.dim:
        raise DimensionMismatchError(
            f"base measure of dimension {pi.dim} cannot be mapped by a {g.dim}-dimensional map"
        )
    return BaseMeasure(
        m0=g.C @ pi.m0 + g.b,
        B0=pi.B0.congruent(g.C),
        nu0=pi.nu0,
        S0=pi.S0.congruent(g.C),
    )


def map_hyperprior(spec, g):
    """Pushes a HyperPriorSpec through g so that the random (m0, B0) transform like `map_base_measure`."""
    if spec.dim != g.dim:
        raise DimensionMismatchError(
            f"hyperprior of dimension {spec.dim} cannot be mapped by a {g.dim}-dimensional map"
        )
    return HyperPriorSpec(
        b0_df=spec.b0_df,
        b0_scale=spec.b0_scale.congruent(g.C),
        m0_mean=g.C @ spec.m0_mean + g.b,
        kappa0=spec.kappa0,
    )


def sample_covariance(data):
    """Sample mean and unbiased (n - 1 denominator) sample covariance.

    Raises
    ------
    DegenerateDataError
        If n < 2 or the sample covariance is not positive definite (e.g. a constant column or n <= d).
    """
    x = as_data(data)
    n, d = x.shape
    if n < 2:
        raise DegenerateDataError(f"at least two observations are needed, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    try:
        return mean, SPDMatrix(cov)
    except NotPositiveDefiniteError as e:
        raise DegenerateDataError(
            f"sample covariance of {n} observations in {d} dimensions is degenerate: {e}"
        ) from e


def empirical_bayes(data, gamma1, gamma2, nu0):
    """Data-driven base measure: m0 = mean, B0 = S²/gamma1, S0 = (nu0 - d - 1) S²/gamma2.

    Parameters
    ----------
    data : array-like of shape (n, d)
    gamma1 : float
        Positive shrinkage of the location prior covariance
    gamma2 : float
        Positive shrinkage of the prior expected kernel covariance
    nu0 : float
        Degrees of freedom, greater than d + 1

    Returns
    -------
    BaseMeasure
    """
    if gamma1 <= 0 or gamma2 <= 0:
        raise ValueError(f"gamma1 ({gamma1}) and gamma2 ({gamma2}) must be positive")
    mean, cov = sample_covariance(data)
    d = mean.shape[0]
    if not nu0 > d + 1:
        raise ValueError(f"nu0 = {nu0} must exceed d + 1 = {d + 1}")
    return BaseMeasure(
        m0=mean,
        B0=cov.entries / gamma1,
        nu0=nu0,
        S0=(nu0 - d - 1) / gamma2 * cov.entries,
    )


def robustness_threshold(d):
    return (d + 1) * (2 * d - 3)


def check_robustness_condition(pi, d=None):
    """Checks nu0 > (d + 1)(2d - 3), the degrees-of-freedom condition for large-sample robustness.

    Parameters
    ----------
    pi : BaseMeasure
    d : int, optional
        The data dimension. Defaults to the dimension of `pi`.

    Returns
    -------
    RobustnessCheck
        Truthy when the condition holds. `report` states the threshold.
    """
    d = pi.dim if d is None else int(d)
    threshold = robustness_threshold(d)
    satisfied = bool(pi.nu0 > threshold)
    relation = ">" if satisfied else "<="
    report = f"nu0 = {pi.nu0:g} {relation} (d + 1)(2d - 3) = {threshold} for d = {d}"
    if satisfied:
        logging.info(f"Robustness condition holds: {report}")
    else:
        logging.warning(f"Robustness condition fails: {report}")
    return RobustnessCheck(satisfied, d, pi.nu0, threshold, report)


def expected_clusters(alpha, n):
    """Prior expected number of clusters among n observations, sum_i alpha / (alpha + i - 1)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    return float(np.sum(alpha / (alpha + np.arange(n))))


def standardize(data):
    """Standardises every column to sample mean 0 and sample standard deviation 1.

    Parameters
    ----------
    data : array-like of shape (n, d)

    Returns
    -------
    tuple of (np.ndarray, AffineMap)
        The standardised data and the diagonal map g(x) = diag(1/sd)(x - mean) that produced it.
    """
    x = as_data(data)
    if x.shape[0] < 2:
        raise DegenerateDataError("at least two observations are needed to standardise")
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    constant = np.flatnonzero(sd == 0)
    if constant.size:
        raise DegenerateDataError(f"columns {constant.tolist()} have zero variance")
    g = AffineMap(np.diag(1.0 / sd), -mean / sd)
    return apply_affine(x, g), g


def inverse_gamma_to_wishart(a0, b0):
    """The 1x1 inverse-Wishart IW(2 a0, 2 b0) equal to the inverse-gamma IG(a0, b0)."""
    if a0 <= 0 or b0 <= 0:
        raise ValueError(f"inverse-gamma parameters ({a0}, {b0}) must be positive")
    return 2.0 * a0, SPDMatrix([[2.0 * b0]])


def scale_for_expected_sigma(nu0, expected_sigma):
    """The scale S0 = (nu0 - d - 1) E[Sigma] giving a requested prior mean of the kernel covariance."""
    expected_sigma = as_spd(expected_sigma)
    d = expected_sigma.dim
    if not nu0 > d + 1:
        raise ValueError(f"nu0 = {nu0} must exceed d + 1 = {d + 1}")
    return SPDMatrix((nu0 - d - 1) * expected_sigma.entries)


def sample_prior_predictive(pi, size, rng):
    """Draws `size` observations from the prior predictive: (mu, Sigma) ~ P0, then x ~ N(mu, Sigma).

    Returns
    -------
    np.ndarray of shape (size, d)
    """
    d = pi.dim
    mus = pi.m0 + rng.standard_normal((size, d)) @ pi.B0.chol.T
    sigmas = sample_inv_wishart(pi.nu0, pi.S0, rng, size=size)
    chols = np.linalg.cholesky(sigmas)
    z = rng.standard_normal((size, d))
    return mus + np.einsum("kij,kj->ki", chols, z)


def stick_breaking_weights(alpha, truncation, rng):
    """Truncated stick-breaking weights w_j = v_j prod_{i<j}(1 - v_i), v_i ~ Beta(1, alpha).

    The last weight takes the remaining stick so that the weights sum to one.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if truncation < 1:
        raise ValueError(f"truncation must be at least 1, got {truncation}")
    v = np.append(sample_beta(1.0, alpha, rng, size=truncation - 1), 1.0)
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - v[:-1])])
    return v * remaining


def alpha_prior_mean(spec):
    """E[alpha]: the fixed value, or shape / rate under a gamma prior."""
    return spec.prior_mean
