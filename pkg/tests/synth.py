"""Small synthetic regression instances shared by several test modules."""

import numpy as np

from moranfilt.eigenbase import exact_basis_from_coords
from moranfilt.spatial_graph import KernelSpec, estimate_range_mst


def random_effects_instance(n, seed, sigma_gamma2=4.0, beta=(1.0, 2.0, -0.5)):
    """Exact Moran basis plus ``y = X b + E gamma + e`` with ``gamma ~ N(0, s Lambda)``."""
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, 2))
    spec = KernelSpec("exp", estimate_range_mst(pts))
    basis = exact_basis_from_coords(pts, spec)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, len(beta) - 1))])
    gamma = rng.standard_normal(basis.L) * np.sqrt(sigma_gamma2 * basis.values)
    y = X @ np.asarray(beta) + basis.vectors @ gamma + rng.standard_normal(n)
    return X, y, basis, pts, spec
