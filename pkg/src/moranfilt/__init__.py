"""Fast Moran eigenvector spatial filtering for large point datasets."""

from .diagnostics import (
    McReport,
    MetricRow,
    analytic_grid_eigenvalues,
    bias,
    contribution_lower_bound,
    residual_mc_z,
    rmse,
    rmspe_se,
)
from .eigenbase import EigenBasis, exact_moran_eigen, moran_coefficient, nystrom_moran_eigen
from .esf import EsfFit, fit_esf, fit_esf_stepwise, fit_lm, screen_eigenvectors
from .reesf import (
    MomentSet,
    ReesfFit,
    Theta,
    compute_moments,
    fit_reesf,
    lambda_alpha,
    profile_restricted_loglik,
    true_se_oracle,
)
from .simgen import SimConfig, run_experiment
from .spatial_graph import (
    KernelSpec,
    KnotSet,
    build_connectivity,
    build_cross_connectivity,
    estimate_range_mst,
    kernel_value,
    select_knots,
)

__version__ = "0.1.0"
