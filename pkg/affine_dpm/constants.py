import numpy as np

# Sampler defaults (mixture-of-Gaussians simulation study)
n_iter = 5000
burn_in = 2500
thin = 1
aux_m = 3

# Analysis pipeline defaults (standardised astronomical data)
analysis_n_iter = 20000
analysis_burn_in = 5000
analysis_nu0 = 26.0
analysis_b0_df = 6.0
analysis_b0_scale = 15.0
analysis_alpha_shape = 1.0
analysis_alpha_rate = 5.26
analysis_expected_sigma = 1.0
credible_level = 0.95

# Numerical tolerances
symmetry_rtol = 1e-12
pivot_rtol = 1e-12
singular_map_rtol = 1e-12
grid_rtol = 1e-9

# Grid defaults
grid_steps = 200
grid_steps_1d = 2000
grid_extend = 0.25
grid_cap = 10**6
experiment_grid_steps = 100
experiment_density_draws = 500

# Mixture-of-Gaussians scenario
mog_means = np.array([[-2.0, -2.0], [2.0, 2.0]])
mog_covs = np.array([[[1.0, 0.85], [0.85, 1.0]], [[1.0, 0.0], [0.0, 1.0]]])
mog_weights = np.array([0.5, 0.5])
mog_b0_df = 4.0
mog_b0_scale = 15.0
mog_nu0 = 4.0
mog_s0 = 1.0
mog_alpha = 1.0

# Student-t scenario (univariate model, inverse-gamma base and hyperprior)
student_t_df = 2.0
student_t_a0 = 2.0
student_t_b0 = 1.0
student_t_hyper_a = 2.0
student_t_hyper_b = 1.0

# Replicate grid
rescale_constants = (0.2, 0.5, 1.0, 2.0, 5.0)
sample_sizes = (100, 300, 1000)
desk_replicates = 10
paper_replicates = 100
prop1_n = 50
prop1_n_iter = 500
prop1_maps = 5
prop1_seeds = 3

studies = ("table1", "fig2", "fig4", "prop1")
scales = ("desk", "paper")

# Stream names used to derive independent random streams from a master seed
allocation_stream = 0
parameter_stream = 1
hyper_stream = 2
density_stream = 3
simulation_stream = 4

__doc__ = """
Useful stored values for the affine_dpm package

Stored Values
-------------
- n_iter, burn_in, thin, aux_m: default chain length, burn-in, thinning and number of auxiliary components per allocation move.
- analysis_*: defaults of the standardised-data analysis pipeline (20 000 iterations after 5 000 of burn-in, nu0 = 26, B0 ~ IW(6, diag(15)), alpha ~ Gamma(1, 5.26)).
- mog_*: the two-component bivariate Gaussian mixture scenario and the prior used to fit it.
- student_t_*: the Student's t scenario (2 degrees of freedom) and its univariate inverse-gamma prior.
- rescale_constants, sample_sizes: the replicate grid of the simulation studies.
- experiment_grid_steps, experiment_density_draws: grid resolution and number of evenly spaced draws used for the densities of the replicate studies.
- *_stream: identifiers of the random streams derived from a master seed.
"""
