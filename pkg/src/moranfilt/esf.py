"""Fixed-effects eigenvector spatial filtering."""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import CollinearityError, DomainError, ParameterError
from .spatial_graph import dense_cap

DEFAULT_SCREEN = 0.01
STEPWISE_MAX_N = 10_000
STEPWISE_MAX_L = 200


@dataclass
class EsfFit:
    beta: np.ndarray
    gamma: np.ndarray
    beta_se: np.ndarray
    gamma_se: np.ndarray
    sigma2: float
    selected: np.ndarray
    residuals: np.ndarray
    adj_r2: float
    rss: float

    @property
    def cov_beta_diag(self):
        return self.beta_se**2


def _as_design(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != len(y):
        raise ParameterError(f"X has {X.shape[0]} rows but y has {len(y)}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ParameterError("X and y must be finite")
    return X, y


def screen_eigenvectors(y, basis, threshold=DEFAULT_SCREEN):
    """Indices of basis columns with ``|cor(y, e_l)| > threshold``."""
    if not 0.0 <= threshold < 1.0:
        raise ParameterError(f"screening threshold must be in [0, 1), got {threshold}")
    y = np.asarray(y, dtype=float).ravel()
    yc = y - y.mean()
    ynorm = np.linalg.norm(yc)
    if ynorm == 0 or np.ptp(y) == 0:
        raise DomainError("cannot screen against a constant response")
    E = basis.vectors
    Ec = E - E.mean(axis=0)
    enorm = np.linalg.norm(Ec, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (yc @ Ec) / (ynorm * enorm)
    r = np.where(enorm > 0, r, 0.0)
    return np.flatnonzero(np.abs(r) > threshold)


def ols(Z, y):
    """Least squares through a pivoted QR of ``Z``.

    Returns ``(coef, cov_unscaled, rss)`` where ``cov_unscaled`` is
    ``(Z'Z)^-1``.
    """
    n, p = Z.shape
    if n <= p:
        raise ParameterError(f"need more observations than regressors ({n} <= {p})")
    Q, R, piv = linalg.qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(n, p) * np.finfo(float).eps if p else 0.0
    bad = diag <= tol
    if bad.any():
        raise CollinearityError(
            f"design is rank deficient; dependent columns {sorted(piv[bad].tolist())}",
            columns=sorted(piv[bad].tolist()),
        )
    qty = Q.T @ y
    coef = np.empty(p)
    coef[piv] = linalg.solve_triangular(R, qty)
    Rinv = linalg.solve_triangular(R, np.eye(p))
    cov = np.empty((p, p))
    G = Rinv @ Rinv.T
    cov[np.ix_(piv, piv)] = G
    resid = y - Z @ coef
    return coef, cov, float(resid @ resid)


def _fit_columns(X, y, E, selected):
    n, K = X.shape
    Z = np.hstack([X, E]) if E.shape[1] else X
    p = Z.shape[1]
    if n <= p:
        raise ParameterError(f"insufficient data: n={n} <= K + L'={p}")
    coef, cov, rss = ols(Z, y)
    sigma2 = rss / (n - p)
    se = np.sqrt(sigma2 * np.diag(cov))
    tss = float(np.sum((y - y.mean()) ** 2))
    adj = 1.0 - (rss / (n - p)) / (tss / (n - 1)) if tss > 0 else np.nan
    return EsfFit(
        beta=coef[:K], gamma=coef[K:], beta_se=se[:K], gamma_se=se[K:],
        sigma2=sigma2, selected=np.asarray(selected, dtype=int),
        residuals=y - Z @ coef, adj_r2=adj, rss=rss,
    )


def fit_lm(X, y):
    """Plain OLS, reported as an :class:`EsfFit` with no eigenvectors."""
    X, y = _as_design(X, y)
    return _fit_columns(X, y, np.empty((len(y), 0)), [])


def fit_esf(X, y, basis, screening=None):
    """OLS on ``[X, E]`` using all (or correlation-screened) eigenvectors.

    Parameters
    ----------
    X : ndarray, shape (n, K)
        Covariates including the intercept column.
    y : ndarray, shape (n,)
    basis : EigenBasis
    screening : float or None
        Keep only eigenvectors with ``|cor(y, e_l)| > screening``.
    """
    X, y = _as_design(X, y)
    if basis.n != len(y):
        raise ParameterError("basis and data have different numbers of rows")
    if screening is None:
        selected = np.arange(basis.L)
    else:
        selected = screen_eigenvectors(y, basis, screening)
    return _fit_columns(X, y, basis.vectors[:, selected], selected)


def fit_esf_stepwise(X, y, basis):
    """Forward selection maximizing adjusted R^2.

    Small-n baseline only. Candidates are scored by the RSS reduction they
    give against the current model, computed from an orthonormal basis of
    the selected columns; ties go to the lowest index.
    """
    X, y = _as_design(X, y)
    n, K = X.shape
    if n > min(STEPWISE_MAX_N, dense_cap()):
        raise ParameterError(f"stepwise selection is limited to n <= {STEPWISE_MAX_N}")
    if basis.L > STEPWISE_MAX_L:
        basis = basis.head(STEPWISE_MAX_L)
    E = basis.vectors
    tss = float(np.sum((y - y.mean()) ** 2))

    Q, _ = np.linalg.qr(X)
    r = y - Q @ (Q.T @ y)
    rss = float(r @ r)
    Er = E - Q @ (Q.T @ E)
    selected = []
    available = np.ones(E.shape[1], dtype=bool)

    def adj(rss_, p):
        return 1.0 - (rss_ / (n - p)) / (tss / (n - 1))

    best_adj = adj(rss, K)
    while available.any() and n - K - len(selected) - 1 > 0:
        norms = np.einsum("ij,ij->j", Er, Er)
        ok = available & (norms > 1e-12 * np.maximum(np.einsum("ij,ij->j", E, E), 1e-300))
        if not ok.any():
            break
        gain = np.where(ok, (r @ Er) ** 2 / np.where(ok, norms, 1.0), -np.inf)
        j = int(np.argmax(gain))
        cand = adj(rss - gain[j], K + len(selected) + 1)
        if not cand > best_adj:
            break
        best_adj = cand
        selected.append(j)
        available[j] = False
        q = Er[:, j] / np.sqrt(norms[j])
        r = r - q * (q @ r)
        rss = float(r @ r)
        Er = Er - np.outer(q, q @ Er)
    selected = np.array(sorted(selected), dtype=int)
    return _fit_columns(X, y, E[:, selected], selected)
