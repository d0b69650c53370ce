"""Random-effects eigenvector spatial filtering in moment space.

The model is ``y = X b + E V(theta) u + e`` with ``u ~ N(0, s2 I)``,
``e ~ N(0, s2 I)`` and ``V(theta) = sqrt(sigma_gamma2 * Lambda(alpha))``.
After one pass over the rows every likelihood evaluation works on
``(K + L)``-sized cross-moments only.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import ConvergenceError, DomainError, ParameterError

MAX_EVALS = 500
SIMPLEX_TOL = 1e-6
_BLOCK = 8192


@dataclass(frozen=True)
class Theta:
    alpha: float
    sigma_gamma2: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if not (np.isfinite(self.sigma_gamma2) and self.sigma_gamma2 >= 0):
            raise ParameterError(f"sigma_gamma2 must be >= 0, got {self.sigma_gamma2}")


@dataclass(frozen=True)
class MomentSet:
    M_XX: np.ndarray
    M_EX: np.ndarray
    M_EE: np.ndarray
    m_Xy: np.ndarray
    m_Ey: np.ndarray
    m_yy: float
    n: int

    @property
    def K(self):
        return self.M_XX.shape[0]

    @property
    def L(self):
        return self.M_EE.shape[0]


@dataclass
class ReesfFit:
    beta: np.ndarray
    u: np.ndarray
    gamma: np.ndarray
    theta: Theta
    sigma2: float
    cov: np.ndarray
    loglik: float
    residuals: np.ndarray
    beta_se: np.ndarray = field(init=False)
    gamma_se: np.ndarray = field(init=False)
    n_evals: int = 0
    v: np.ndarray = None

    def __post_init__(self):
        K = len(self.beta)
        se = np.sqrt(np.clip(np.diag(self.cov), 0.0, None))
        self.beta_se = se[:K]
        v = self.v if self.v is not None else np.ones(len(self.u))
        self.gamma_se = v * se[K:]


def lambda_alpha(values, alpha):
    """Eigenvalues raised to ``alpha`` and rescaled to keep their sum.

    ``(sum(lam) / sum(lam**alpha)) * lam**alpha``; evaluated through logs so
    large ``alpha`` does not overflow.
    """
    lam = np.asarray(values, dtype=float)
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise DomainError("eigenvalues must be positive and finite")
    if not np.isfinite(alpha) or alpha < 0:
        raise DomainError(f"alpha must be finite and nonnegative, got {alpha}")
    if lam.size == 0:
        return lam.copy()
    logw = alpha * np.log(lam)
    w = np.exp(logw - logw.max())
    return lam.sum() * w / w.sum()


def compute_moments(X, y, basis):
    """All six cross-moments in a single blocked pass over the rows."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    E = basis.vectors if hasattr(basis, "vectors") else np.asarray(basis, dtype=float)
    n = len(y)
    if X.shape[0] != n or E.shape[0] != n:
        raise ParameterError("X, y and the basis must have the same number of rows")
    K, L = X.shape[1], E.shape[1]
    M_XX = np.zeros((K, K))
    M_EX = np.zeros((L, K))
    M_EE = np.zeros((L, L))
    m_Xy = np.zeros(K)
    m_Ey = np.zeros(L)
    m_yy = 0.0
    for s in range(0, n, _BLOCK):
        Xb, Eb, yb = X[s:s + _BLOCK], E[s:s + _BLOCK], y[s:s + _BLOCK]
        M_XX += Xb.T @ Xb
        M_EX += Eb.T @ Xb
        M_EE += Eb.T @ Eb
        m_Xy += Xb.T @ yb
        m_Ey += Eb.T @ yb
        m_yy += float(yb @ yb)
    M_XX = 0.5 * (M_XX + M_XX.T)
    M_EE = 0.5 * (M_EE + M_EE.T)
    return MomentSet(M_XX, M_EX, M_EE, m_Xy, m_Ey, m_yy, n)


def _scale(values, theta):
    return np.sqrt(theta.sigma_gamma2 * lambda_alpha(values, theta.alpha))


def _system(mo, v):
    K, L = mo.K, mo.L
    B = np.empty((K + L, K + L))
    B[:K, :K] = mo.M_XX
    B[K:, :K] = v[:, None] * mo.M_EX
    B[:K, K:] = B[K:, :K].T
    B[K:, K:] = v[:, None] * mo.M_EE * v[None, :] + np.eye(L)
    rhs = np.concatenate([mo.m_Xy, v * mo.m_Ey])
    return B, rhs


def profile_restricted_loglik(moments, values, theta):
    """Profile restricted log-likelihood at ``theta``.

    Returns
    -------
    loglik : float
        ``-inf`` when the system matrix is not positive definite.
    beta : ndarray, shape (K,)
    u : ndarray, shape (L,)
        Standardized random effects.
    rss : float
        Residual sum of squares ``e'e`` (without the ``u'u`` penalty).
    """
    mo = moments
    v = _scale(values, theta)
    B, rhs = _system(mo, v)
    K, L = mo.K, mo.L
    try:
        cf = linalg.cho_factor(B, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        return -np.inf, np.full(K, np.nan), np.full(L, np.nan), np.nan
    sol = linalg.cho_solve(cf, rhs)
    beta, u = sol[:K], sol[K:]
    B0 = B.copy()
    B0[K:, K:] -= np.eye(L)
    rss = mo.m_yy - 2.0 * sol @ rhs + sol @ B0 @ sol
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    dof = mo.n - K
    pen = rss + u @ u
    if not (np.isfinite(logdet) and pen > 0):
        return -np.inf, beta, u, rss
    loglik = -0.5 * logdet - 0.5 * dof * (1.0 + np.log(2.0 * np.pi * pen / dof))
    return float(loglik), beta, u, float(rss)


def fit_reesf(X, y, basis, start=None, max_evals=MAX_EVALS):
    """Fit the random-effects model by maximizing the profile likelihood.

    Nelder-Mead runs on ``(log sigma_gamma2, log alpha)`` starting from
    ``alpha = 1`` and ``sigma_gamma2 = var(OLS residuals) / 2``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, K = X.shape
    if n <= K:
        raise ParameterError(f"need n > K, got n={n}, K={K}")
    if basis.L == 0:
        raise ParameterError("random-effects fit needs a nonempty basis")
    values = np.asarray(basis.values, dtype=float)
    mo = compute_moments(X, y, basis)
    return fit_reesf_moments(mo, values, X, y, basis.vectors, start, max_evals)


def fit_reesf_moments(mo, values, X, y, E, start=None, max_evals=MAX_EVALS):
    n, K = mo.n, mo.K
    if start is None:
        beta_ols = linalg.lstsq(mo.M_XX, mo.m_Xy)[0]
        rss_ols = mo.m_yy - beta_ols @ mo.m_Xy
        start = Theta(1.0, max(rss_ols / (n - K), 1e-8) / 2.0)

    def negll(p):
        theta = Theta(float(np.exp(p[1])), float(np.exp(p[0])))
        ll = profile_restricted_loglik(mo, values, theta)[0]
        return -ll if np.isfinite(ll) else np.inf

    x0 = np.array([np.log(start.sigma_gamma2), np.log(start.alpha)])
    simplex = np.vstack([x0, x0 + [1.0, 0.0], x0 + [0.0, 1.0]])
    res = optimize.minimize(
        negll, x0, method="Nelder-Mead",
        options=dict(initial_simplex=simplex, xatol=SIMPLEX_TOL, fatol=1e-10,
                     maxfev=max_evals, maxiter=max_evals),
    )
    theta = Theta(float(np.exp(res.x[1])), float(np.exp(res.x[0])))
    if not np.isfinite(res.fun):
        raise ConvergenceError("likelihood is not finite at any evaluated point", best=theta)
    if not res.success:
        raise ConvergenceError(
            f"Nelder-Mead did not converge within {max_evals} evaluations", best=theta
        )

    loglik, beta, u, rss = profile_restricted_loglik(mo, values, theta)
    v = _scale(values, theta)
    B, _ = _system(mo, v)
    sigma2 = rss / (n - K)
    cov = sigma2 * linalg.cho_solve(linalg.cho_factor(B, lower=True), np.eye(len(B)))
    cov = 0.5 * (cov + cov.T)
    gamma = v * u
    residuals = None
    if X is not None and y is not None and E is not None:
        residuals = y - X @ beta - E @ gamma
    return ReesfFit(beta=beta, u=u, gamma=gamma, theta=theta, sigma2=sigma2, cov=cov,
                    loglik=loglik, residuals=residuals, n_evals=int(res.nfev), v=v)


def true_se_oracle(X, basis, theta_true, sigma2_true):
    """GLS standard errors of ``beta`` under the true covariance.

    The covariance is ``sigma_gamma2 * E Lambda(alpha) E' + sigma2 * I``; it is
    inverted through the Woodbury identity so no ``n x n`` matrix appears.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if sigma2_true <= 0:
        raise ParameterError("sigma2_true must be positive")
    XtX = X.T @ X
    if basis.L == 0 or theta_true.sigma_gamma2 == 0:
        prec = XtX / sigma2_true
    else:
        v = np.sqrt(theta_true.sigma_gamma2 * lambda_alpha(basis.values, theta_true.alpha)
                    / sigma2_true)
        EV = basis.vectors * v
        A = EV.T @ EV + np.eye(basis.L)
        XEV = X.T @ EV
        prec = (XtX - XEV @ linalg.solve(A, XEV.T, assume_a="pos")) / sigma2_true
    cov = linalg.inv(0.5 * (prec + prec.T))
    return np.sqrt(np.diag(cov))
