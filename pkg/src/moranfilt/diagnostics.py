"""Residual Moran tests, Monte Carlo error metrics and grid spectra bounds."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DomainError, ParameterError
from .spatial_graph import as_coordinates, kernel_value

DEFAULT_MAX_EXACT_N = 10_000
GRID_RANGE = 1.0 / (2.0 * np.pi)


@dataclass
class McReport:
    mc: float
    expected: float
    variance: float
    z: float
    n_used: int
    subsampled: bool

    def to_dict(self):
        return asdict(self)


@dataclass
class MetricRow:
    estimator_name: str
    bias: float
    rmse: float
    rmspe_se: float
    mean_z_mc: float
    mean_runtime_seconds: float
    replications: int

    def to_dict(self):
        return asdict(self)


def residual_mc_z(residuals, coords, spec, max_exact_n=DEFAULT_MAX_EXACT_N, seed=0,
                  block=2048):
    """Moran coefficient of residuals and its z-value under the normality null.

    The kernel matrix is rebuilt from ``coords`` (zero diagonal) one row
    block at a time, so memory stays at ``block * n``. Above ``max_exact_n``
    sites a seeded uniform subsample of that size is used.
    """
    e = np.asarray(residuals, dtype=float).ravel()
    pts = as_coordinates(coords)
    if len(e) != len(pts):
        raise ParameterError("residuals and coordinates differ in length")
    if np.ptp(e) == 0:
        raise DomainError("Moran coefficient is undefined for constant residuals")
    subsampled = False
    if len(e) > max_exact_n:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(e), size=max_exact_n, replace=False))
        e, pts = e[idx], pts[idx]
        subsampled = True
    n = len(e)
    z = e - e.mean()

    s0 = s1 = s2 = num = 0.0
    for start in range(0, n, block):
        stop = min(start + block, n)
        Cb = kernel_value(spec, cdist(pts[start:stop], pts))
        Cb[np.arange(stop - start), np.arange(start, stop)] = 0.0
        rows = Cb.sum(axis=1)
        s0 += rows.sum()
        s1 += 2.0 * np.sum(Cb * Cb)
        s2 += np.sum((2.0 * rows) ** 2)
        num += z[start:stop] @ (Cb @ z)

    mc = n / s0 * num / (z @ z)
    expected = -1.0 / (n - 1)
    variance = (n * n * s1 - n * s2 + 3.0 * s0 * s0) / ((n * n - 1.0) * s0 * s0) - expected**2
    return McReport(float(mc), expected, float(variance),
                    float((mc - expected) / np.sqrt(variance)), n, subsampled)


def bias(estimates, truth):
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ParameterError("no estimates")
    return float(np.mean(est - truth))


def rmse(estimates, truth):
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ParameterError("no estimates")
    return float(np.sqrt(np.mean((est - truth) ** 2)))


def rmspe_se(se_estimates, se_truths):
    """Root mean squared relative error of standard errors."""
    est = np.asarray(se_estimates, dtype=float)
    tru = np.asarray(se_truths, dtype=float)
    if est.shape != tru.shape or est.size == 0:
        raise ParameterError("standard-error lists must be nonempty and of equal length")
    if np.any(tru <= 0):
        raise DomainError("true standard errors must be positive")
    return float(np.sqrt(np.mean(((est - tru) / tru) ** 2)))


def grid_frequencies(N, wrap=True):
    """Squared norms of the 2-D DFT frequency pairs of an N x N grid.

    With ``wrap`` the index ``k`` stands for the signed frequency
    ``min(k, N - k)``, so ``k`` and ``N - k`` share a magnitude.
    """
    k = np.arange(N, dtype=float)
    if wrap:
        k = np.minimum(k, N - k)
    return (k[:, None] ** 2 + k[None, :] ** 2).ravel()


def _grid_spectrum(N, r, wrap):
    if N < 2:
        raise ParameterError("grid side N must be at least 2")
    if r <= 0:
        raise ParameterError("range r must be positive")
    tau = (1.0 / r**2 + 4.0 * np.pi**2 * grid_frequencies(N, wrap)) ** -1.5
    n = N * N
    # the DC term (k = (0, 0)) has the largest tau and sorts first
    plus_one = n * tau / tau.sum()
    order = np.argsort(-plus_one, kind="stable")
    return plus_one[order]


def analytic_grid_eigenvalues(N, r=GRID_RANGE, wrap=True):
    """Analytic eigenvalues of the zero-diagonal exponential kernel on a grid.

    Spectral weights ``(1/r^2 + 4 pi^2 |k|^2)^-1.5`` over the ``N^2``
    frequency pairs are normalized to sum to ``n = N^2`` (the trace of
    ``C + I``); one is subtracted for ``C``. Sorted largest first.
    """
    return _grid_spectrum(N, r, wrap) - 1.0


def contribution_lower_bound(N, r=GRID_RANGE, L=200, wrap=True):
    """Lower bound on the share of positive-dependence variation in ``L`` vectors.

    On a grid the constant mode is an eigenvector of ``C``, so
    ``1'C1 = n * lam_dc`` and ``(e'1)^2`` is ``n`` for that mode and 0 for
    every sinusoid. The constant mode then contributes nothing to the
    numerator, and the denominator is the positive spectrum of the centered
    matrix, i.e. the positive non-constant eigenvalues.
    """
    lam = analytic_grid_eigenvalues(N, r, wrap)
    n = N * N
    positive = lam > 0
    n_pos = int(positive.sum())
    L = int(L)
    if L < 1 or L > n_pos:
        raise ParameterError(f"L must be in [1, {n_pos}] (positive eigenvalues), got {L}")
    ones_proj = np.zeros_like(lam)
    ones_proj[0] = n
    mean_conn = lam[0] * n / n**2
    terms = lam[:L] + (mean_conn - 2.0 / n * lam[:L]) * ones_proj[:L]
    denom = lam[1:][positive[1:]].sum()
    return float(terms.sum() / denom)
