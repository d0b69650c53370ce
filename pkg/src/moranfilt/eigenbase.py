"""Moran eigenpairs: the exact dense decomposition and the Nystrom extension."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateError, DomainError, ParameterError
from .spatial_graph import (
    KernelSpec,
    KnotSet,
    as_coordinates,
    build_connectivity,
    build_cross_connectivity,
    dense_cap,
)

MAX_KNOTS = 1000
_BLOCK = 8192


class Mode(str, Enum):
    EXACT = "exact"
    NYSTROM = "nystrom"


@dataclass(frozen=True)
class EigenBasis:
    """Eigenvectors (columns of ``vectors``) with eigenvalues, largest first."""

    vectors: np.ndarray
    values: np.ndarray
    mode: Mode
    kernel: KernelSpec | None = None
    knots: KnotSet | None = None

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def L(self):
        return self.vectors.shape[1]

    def head(self, L):
        """Basis restricted to the first ``L`` pairs."""
        return EigenBasis(self.vectors[:, :L], self.values[:L], self.mode,
                          self.kernel, self.knots)

    def take(self, idx):
        idx = np.asarray(idx, dtype=int)
        return EigenBasis(self.vectors[:, idx], self.values[idx], self.mode,
                          self.kernel, self.knots)

    @classmethod
    def empty(cls, n):
        return cls(np.empty((n, 0)), np.empty(0), Mode.EXACT)


@dataclass(frozen=True)
class CenteredKnotEigen:
    """Eigenpairs of the doubly centered knot matrix ``M_L C_L+ M_L``."""

    knot_vectors: np.ndarray
    knot_values_plus_one: np.ndarray


def fix_signs(vectors, rel_tol=1e-10):
    """Flip columns so the first clearly nonzero entry is positive."""
    V = np.array(vectors, dtype=float, copy=True)
    if V.size == 0:
        return V
    scale = np.max(np.abs(V), axis=0)
    mask = np.abs(V) > rel_tol * scale
    first = np.argmax(mask, axis=0)
    signs = np.sign(V[first, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def double_center(A):
    """``M A M`` for a square matrix without forming ``M``."""
    A = np.asarray(A, dtype=float)
    row = A.mean(axis=1, keepdims=True)
    col = A.mean(axis=0, keepdims=True)
    out = A - row - col + A.mean()
    return 0.5 * (out + out.T)


def _check_zero_diag_symmetric(C):
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ParameterError(f"connectivity matrix must be square, got {C.shape}")
    if not np.allclose(C, C.T, rtol=0, atol=1e-12):
        raise ParameterError("connectivity matrix must be symmetric")
    if np.any(np.diag(C) != 0):
        raise ParameterError("connectivity matrix must have a zero diagonal")
    return C


def exact_moran_eigen(C, positive_only=True, kernel=None):
    """Eigen-decomposition of ``MCM`` for a dense connectivity matrix.

    Parameters
    ----------
    C : ndarray, shape (n, n)
        Symmetric connectivity matrix with zero diagonal.
    positive_only : bool
        Keep only pairs with a positive eigenvalue (positive dependence).

    Returns
    -------
    EigenBasis
        Unit-norm eigenvectors, eigenvalues in non-increasing order.
    """
    C = _check_zero_diag_symmetric(C)
    n = C.shape[0]
    if n > dense_cap():
        raise ParameterError(f"exact decomposition refused for n={n} above dense cap")
    values, vectors = np.linalg.eigh(double_center(C))
    order = np.argsort(values)[::-1]
    values = values[order]
    vectors = fix_signs(vectors[:, order])
    if positive_only:
        tol = 1e-10 * max(np.max(np.abs(values)), 1.0)
        keep = values > tol
        values, vectors = values[keep], vectors[:, keep]
    return EigenBasis(vectors, values, Mode.EXACT, kernel)


def exact_basis_from_coords(coords, spec, positive_only=True):
    C = build_connectivity(coords, spec, zero_diagonal=True)
    return exact_moran_eigen(C, positive_only=positive_only, kernel=spec)


def centered_knot_eigen(knots, spec):
    K = knots.knots if isinstance(knots, KnotSet) else np.asarray(knots, dtype=float)
    CL = build_connectivity(K, spec, zero_diagonal=False, allow_large=True)
    values, vectors = np.linalg.eigh(double_center(CL))
    order = np.argsort(values)[::-1]
    return CenteredKnotEigen(vectors[:, order], values[order]), CL


def nystrom_moran_eigen(coords, knots, spec, positive_only=True):
    """Approximate Moran eigenpairs of ``n`` sites from ``L`` knots.

    The knot matrix ``C_L+`` (unit diagonal) is doubly centered and
    decomposed; sample-to-knot kernel rows, shifted by the column means of
    ``C_L+``, are projected onto the knot eigenvectors and divided by the
    knot eigenvalues. Eigenvalues are rescaled by ``(L + n) / L``.

    Columns whose knot eigenvalue falls below
    ``max_eigenvalue * 1e-12 * L`` are dropped, as are columns with a
    non-positive approximated eigenvalue when ``positive_only``.

    Returns
    -------
    EigenBasis
        In Nystrom mode; columns are not rescaled to unit norm.
    """
    pts = as_coordinates(coords)
    if not isinstance(knots, KnotSet):
        knots = KnotSet(np.asarray(knots, dtype=float))
    n, L = len(pts), len(knots)
    if L < 2:
        raise ParameterError("the Nystrom extension needs at least two knots")
    if L > MAX_KNOTS:
        raise ParameterError(f"at most {MAX_KNOTS} knots are supported, got {L}")

    ke, CL = centered_knot_eigen(knots, spec)
    w = ke.knot_values_plus_one
    tol = max(w[0], 0.0) * 1e-12 * L
    keep = w > tol
    if not keep.any():
        raise DegenerateError("all knot eigenvalues vanish; use more dispersed knots")
    lam = (L + n) / L * w - 1.0
    if positive_only:
        keep &= lam > 0
    EL = ke.knot_vectors[:, keep]
    proj = EL / w[keep]
    col_means = CL.mean(axis=0)

    vectors = np.empty((n, proj.shape[1]))
    for start in range(0, n, _BLOCK):
        block = build_cross_connectivity(pts[start:start + _BLOCK], knots, spec)
        vectors[start:start + _BLOCK] = (block - col_means) @ proj
    return EigenBasis(fix_signs(vectors), lam[keep], Mode.NYSTROM, spec, knots)


def moran_coefficient(y, C):
    """Moran coefficient ``(n / 1'C1) * y'MCMy / y'My``."""
    y = np.asarray(y, dtype=float).ravel()
    C = np.asarray(C, dtype=float)
    if C.shape != (len(y), len(y)):
        raise ParameterError("y and C have inconsistent sizes")
    if np.ptp(y) == 0:
        raise DomainError("Moran coefficient is undefined for a constant vector")
    s0 = C.sum()
    if s0 == 0:
        raise DegenerateError("1'C1 = 0; connectivity is degenerate")
    z = y - y.mean()
    den = z @ z
    return len(y) / s0 * (z @ C @ z) / den
