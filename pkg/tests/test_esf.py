import numpy as np
import pytest

from moranfilt.eigenbase import EigenBasis, exact_basis_from_coords, nystrom_moran_eigen
from moranfilt.errors import CollinearityError, DomainError, ParameterError
from moranfilt.esf import fit_esf, fit_esf_stepwise, fit_lm, ols, screen_eigenvectors
from moranfilt.spatial_graph import KernelSpec, estimate_range_mst, select_knots


def _instance(n=200, seed=0, L=None):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, 2))
    spec = KernelSpec("exp", estimate_range_mst(pts))
    if L is None:
        basis = exact_basis_from_coords(pts, spec)
    else:
        basis = nystrom_moran_eigen(pts, select_knots(pts, L, seed=seed), spec)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
    return rng, X, basis


def test_screen_threshold_zero_keeps_everything():
    rng, X, basis = _instance()
    y = rng.standard_normal(basis.n)
    np.testing.assert_array_equal(screen_eigenvectors(y, basis, 0.0), np.arange(basis.L))


def test_screen_threshold_near_one_is_empty():
    rng, X, basis = _instance()
    y = rng.standard_normal(basis.n)
    assert screen_eigenvectors(y, basis, 0.999).size == 0
    with pytest.raises(ParameterError):
        screen_eigenvectors(y, basis, 1.0)


def test_screen_finds_planted_column():
    rng, X, basis = _instance()
    y = basis.vectors[:, 3] + 1e-3 * rng.standard_normal(basis.n)
    assert 3 in screen_eigenvectors(y, basis, 0.5)


def test_screen_constant_response():
    _, _, basis = _instance()
    with pytest.raises(DomainError):
        screen_eigenvectors(np.full(basis.n, 2.0), basis, 0.1)


def test_empty_basis_equals_ols():
    rng, X, _ = _instance()
    y = X @ [1.0, 2.0, -0.5] + rng.standard_normal(len(X))
    fit = fit_esf(X, y, EigenBasis.empty(len(X)))
    ref, *_ = np.linalg.lstsq(X, y, rcond=None)
    np.testing.assert_allclose(fit.beta, ref, atol=1e-12)
    np.testing.assert_allclose(fit_lm(X, y).beta, ref, atol=1e-12)
    assert fit.gamma.size == 0 and fit.selected.size == 0


def test_noise_free_recovery():
    rng, X, basis = _instance(L=40)
    beta = np.array([1.0, 2.0, -0.5])
    gamma = rng.standard_normal(basis.L)
    y = X @ beta + basis.vectors @ gamma
    fit = fit_esf(X, y, basis)
    assert np.abs(fit.residuals).max() < 1e-8
    np.testing.assert_allclose(fit.beta, beta, atol=1e-6)
    np.testing.assert_allclose(fit.gamma, gamma, atol=1e-6)


def test_fit_invariants():
    rng, X, basis = _instance(L=60, seed=3)
    y = X @ [1.0, 2.0, -0.5] + basis.vectors[:, :5] @ np.ones(5) * 3 + rng.standard_normal(len(X))
    fit = fit_esf(X, y, basis, screening=0.05)
    Z = np.hstack([X, basis.vectors[:, fit.selected]])
    scale = np.linalg.norm(Z, axis=0) * np.linalg.norm(fit.residuals)
    assert np.all(np.abs(Z.T @ fit.residuals) <= 1e-6 * scale)
    assert fit.sigma2 >= 0
    assert len(fit.gamma) == len(fit.selected) <= basis.L
    assert fit.sigma2 == pytest.approx(fit.rss / (len(y) - Z.shape[1]))


def test_standard_errors_match_textbook():
    rng, X, basis = _instance(L=30, seed=4)
    y = X @ [1.0, 2.0, -0.5] + rng.standard_normal(len(X))
    fit = fit_esf(X, y, basis)
    Z = np.hstack([X, basis.vectors])
    ref = np.sqrt(fit.sigma2 * np.diag(np.linalg.inv(Z.T @ Z)))
    np.testing.assert_allclose(np.r_[fit.beta_se, fit.gamma_se], ref, rtol=1e-8)


def test_screening_none_equals_zero():
    rng, X, basis = _instance(L=50, seed=5)
    y = X @ [1.0, 2.0, -0.5] + rng.standard_normal(len(X))
    a = fit_esf(X, y, basis)
    b = fit_esf(X, y, basis, screening=0.0)
    np.testing.assert_array_equal(a.selected, b.selected)
    np.testing.assert_array_equal(a.beta, b.beta)


def test_nested_rss_monotone():
    rng, X, basis = _instance(L=60, seed=6)
    y = X @ [1.0, 2.0, -0.5] + rng.standard_normal(len(X))
    rss = [fit_esf(X, y, basis.head(k)).rss for k in (0, 5, 10, 20, 40, basis.L)]
    assert np.all(np.diff(rss) <= 1e-9)


def test_beta_invariant_to_shift_in_eigen_span():
    rng, X, basis = _instance(L=40, seed=7)
    E = basis.vectors
    Xo = X - E @ (E.T @ X)
    Xo[:, 0] = 1.0  # eigenvectors are centered, so the intercept is already orthogonal
    y = Xo @ [1.0, 2.0, -0.5] + rng.standard_normal(len(X))
    c = rng.standard_normal(basis.L)
    a = fit_esf(Xo, y, basis)
    b = fit_esf(Xo, y + E @ c, basis)
    np.testing.assert_allclose(a.beta, b.beta, atol=1e-8)
    np.testing.assert_allclose(b.gamma - a.gamma, c, atol=1e-8)


def test_collinearity_and_size_errors():
    rng, X, basis = _instance(n=60, L=20)
    y = rng.standard_normal(60)
    with pytest.raises(CollinearityError) as err:
        fit_lm(np.column_stack([X, X[:, 1]]), y)
    assert err.value.columns
    with pytest.raises(ParameterError):
        ols(np.ones((3, 3)), np.ones(3))


def test_stepwise_empty_when_nothing_helps():
    rng, X, basis = _instance(n=150, seed=8)
    y = X @ [1.0, 2.0, -0.5]
    # residual-free response: no eigenvector can raise adjusted R^2 above 1
    fit = fit_esf_stepwise(X, y, basis)
    assert fit.selected.size == 0
    np.testing.assert_allclose(fit.beta, fit_lm(X, y).beta, atol=1e-10)


def test_stepwise_finds_planted_column():
    rng, X, basis = _instance(n=200, seed=9)
    y = X @ [1.0, 2.0, -0.5] + 2.0 * basis.vectors[:, 5] + 0.05 * rng.standard_normal(200)
    fit = fit_esf_stepwise(X, y, basis)
    assert 5 in fit.selected
    assert set(fit.selected) <= set(range(basis.L))


def test_stepwise_adjusted_r2_beats_lm():
    rng, X, basis = _instance(n=200, seed=10)
    y = X @ [1.0, 2.0, -0.5] + basis.vectors[:, :8] @ rng.normal(0, 3, 8) + rng.standard_normal(200)
    step = fit_esf_stepwise(X, y, basis)
    assert step.adj_r2 >= fit_lm(X, y).adj_r2
