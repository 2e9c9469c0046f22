"""Bayesian conjugate gradients: posterior distributions over linear-system solutions."""

from .calibration import (
    CalibrationReport,
    chi2_cdf,
    f_cdf,
    gaussian_z,
    ks_critical,
    ks_statistic,
    sample_posterior,
    t_z,
    z_statistic,
)
from .exceptions import (
    BayesCGError,
    BreakdownError,
    DimensionError,
    IncompleteCholeskyBreakdown,
    NotPSDError,
    RankDeficiencyError,
    SingularGramError,
)
from .hennig import MatrixPosterior, matrix_posterior, project_to_solution
from .linalg import (
    TriangularFactor,
    incomplete_cholesky_zero_fill,
    matvec,
    qr_null_space,
    svd_psd,
    symmetric_eig,
    weighted_inner,
)
from .priors import CovarianceOperator, Prior, PriorSpec, build_prior
from .solver import (
    GaussianPosterior,
    SolveConfig,
    TPosterior,
    bayescg,
    bayescg_batch,
    classical_cg,
    hierarchical_posterior,
    materialize_posterior_cov,
    optimal_directions,
    posterior_general,
    termination_sigma,
)
from .testgen import ProblemFamily, draw_truth_and_rhs, poisson2d, random_spd_sparse

__version__ = "0.1.0"
