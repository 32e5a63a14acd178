"""
Joint first exit times of correlated Brownian motions.

Exit times are drawn by mapping a Gaussian copula sample to chi-squared
variates and inverting the chi-squared transform of each coordinate; drifted
coordinates have two candidate roots, chosen with probabilities driven by
the joint exit-time density.  An Euler path simulator serves as baseline.
"""
__version__ = "0.1.0"

from ._backend import backend_name, set_threads
from .analysis import (DefaultDistribution, KsReport, default_probs, ks_1sample,
                       ks_2sample_md)
from .calibration import (CalibratedCopula, PortfolioModel, calibrate, chi2_covariance,
                          pair_rank_corr,
                          pearson_to_spearman, repair_correlation, spearman_to_pearson)
from .density2d import DensityGeometry, PairModel, geometry, joint_density, log_joint_density
from .euler import EulerConfig, euler_sample
from .io import RunConfig, load_config, parse_config, read_samples, write_samples
from .marginal import (DimensionParams, ExitTimeSamples, marginal_cdf, marginal_density,
                       sample_marginal, transform_h)
from .numerics import NonConvergenceError, QuadratureSpec, bessel_i, integrate_1d, integrate_2d
from .sampler import chi_from_normal, root_probs, roots, sample, sample_drifted_2d, sample_zero_drift
