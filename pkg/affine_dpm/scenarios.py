from dataclasses import dataclass

import numpy as np
from scipy import stats

from affine_dpm import constants
from affine_dpm.dataio import read_data
from affine_dpm.density import DensityEstimate, mixture_density
from affine_dpm.model import AffineMap, AlphaSpec, HyperPriorSpec, inverse_gamma_to_wishart

__doc__ = r"""
# Overview
Data generators for the simulation studies, the priors used to fit them and their true densities.

## mog2d
An equal-weight mixture of two bivariate Gaussians, $N((-2,-2), S_1)$ with $S_1 = \begin{pmatrix} 1 & 0.85 \\ 0.85 & 1\end{pmatrix}$ and $N((2,2), I)$.
The fitted prior is $(\nu_0, S_0) = (4, I)$, $B_0 \sim IW(4, 15 I)$, $m_0 \mid B_0 \sim N(0, B_0)$ and $\alpha = 1$.

## student_t
A univariate Student's t with 2 degrees of freedom (no finite variance). The fitted prior uses an inverse-gamma $IG(2, 1)$ base for $\sigma^2$ (an $IW(4, 2)$ in one dimension), $s_0^2 \sim IG(2, 1)$, $m_0 \mid s_0^2 \sim N(0, s_0^2)$ and $\alpha = 1$.

Every scenario is rescaled as $X_c = cX$. The same prior is used for every $c$.
"""

kinds = ("mog2d", "student_t", "file")


@dataclass(frozen=True)
class ScenarioSpec:
    """A data-generating scenario.

    Parameters
    ----------
    kind : {"mog2d", "student_t", "file"}
    n : int
        Sample size, at least 2
    c : float, default=1.0
        Positive rescaling constant
    path : str, optional
        CSV file, for kind "file"
    """

    kind: str
    n: int = 100
    c: float = 1.0
    path: str = None

    def __post_init__(self):
        if self.kind not in kinds:
            raise ValueError(f"unknown scenario {self.kind!r}; expected one of {kinds}")
        if self.n < 2:
            raise ValueError(f"n must be at least 2, got {self.n}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if self.kind == "file" and self.path is None:
            raise ValueError("a file scenario needs a path")

    @property
    def dim(self):
        return 2 if self.kind == "mog2d" else 1

    @property
    def rescaling(self):
        return AffineMap.scaling(self.c, self.dim)

    def to_dict(self):
        return {"kind": self.kind, "n": self.n, "c": self.c, "path": self.path}


def simulate(spec, rng):
    """Draws n observations from the scenario and multiplies them by c.

    Parameters
    ----------
    spec : ScenarioSpec
    rng : RngStream

    Returns
    -------
    np.ndarray of shape (n, d)
    """
    if spec.kind == "mog2d":
        component = (rng.uniform(spec.n) >= constants.mog_weights[0]).astype(int)
        z = rng.standard_normal((spec.n, 2))
        chols = np.linalg.cholesky(constants.mog_covs)
        x = constants.mog_means[component] + np.einsum("kij,kj->ki", chols[component], z)
    elif spec.kind == "student_t":
        x = rng.standard_t(constants.student_t_df, spec.n).reshape(-1, 1)
    else:
        x = read_data(spec.path)
    return spec.c * x


def true_density(spec, grid):
    """Density of the rescaled scenario on a grid."""
    if spec.kind == "mog2d":
        return mixture_density(
            constants.mog_weights,
            spec.c * constants.mog_means,
            spec.c**2 * constants.mog_covs,
            grid,
        )
    if spec.kind == "student_t":
        values = stats.t.pdf(grid.points()[:, 0], df=constants.student_t_df, scale=spec.c)
        return DensityEstimate.from_values(grid, values)
    raise ValueError("the true density of a file scenario is unknown")


def scenario_prior(kind):
    """The (base measure, hyperprior, alpha) used to fit a simulated scenario.

    Returns
    -------
    tuple of (BaseMeasure, HyperPriorSpec, AlphaSpec)
    """
    if kind == "mog2d":
        hyperprior = HyperPriorSpec(
            b0_df=constants.mog_b0_df,
            b0_scale=constants.mog_b0_scale * np.eye(2),
            m0_mean=np.zeros(2),
        )
        pi = hyperprior.mean_base(constants.mog_nu0, constants.mog_s0 * np.eye(2))
        return pi, hyperprior, AlphaSpec("fixed", constants.mog_alpha)
    if kind == "student_t":
        nu0, s0 = inverse_gamma_to_wishart(constants.student_t_a0, constants.student_t_b0)
        b0_df, b0_scale = inverse_gamma_to_wishart(
            constants.student_t_hyper_a, constants.student_t_hyper_b
        )
        hyperprior = HyperPriorSpec(b0_df=b0_df, b0_scale=b0_scale, m0_mean=np.zeros(1))
        pi = hyperprior.mean_base(nu0, s0)
        return pi, hyperprior, AlphaSpec("fixed", constants.mog_alpha)
    raise ValueError(f"no default prior for scenario {kind!r}")

