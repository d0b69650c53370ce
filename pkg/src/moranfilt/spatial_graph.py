"""Spatial connectivity: kernels, MST range, k-means knots, kernel matrices."""

import os
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import DegenerateError, DenseCapError, DomainError, ParameterError

DEFAULT_DENSE_CAP = 20_000
MST_SUBSAMPLE = 20_000
KMEANS_MAX_ITER = 100
# stop once the total squared center shift falls below this share of the data variance
KMEANS_TOL = 1e-4


class Family(str, Enum):
    EXPONENTIAL = "exp"
    SPHERICAL = "sph"
    GAUSSIAN = "gau"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus range parameter ``r``."""

    family: Family = Family.EXPONENTIAL
    range: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not np.isfinite(self.range) or self.range <= 0:
            raise DomainError(f"kernel range must be positive, got {self.range!r}")

    def __call__(self, d):
        return kernel_value(self, d)


@dataclass(frozen=True)
class KnotSet:
    knots: np.ndarray
    source_seed: int | None = None

    def __len__(self):
        return len(self.knots)


def dense_cap():
    """Row cap for dense n x n matrices; ``MORANFILT_DENSE_CAP`` overrides."""
    value = os.environ.get("MORANFILT_DENSE_CAP")
    if value is None:
        return DEFAULT_DENSE_CAP
    try:
        cap = int(value)
    except ValueError:
        raise ParameterError(f"MORANFILT_DENSE_CAP must be an integer, got {value!r}")
    if cap < 2:
        raise ParameterError("MORANFILT_DENSE_CAP must be at least 2")
    return cap


def as_coordinates(coords):
    """Validate and return an ``(n, 2)`` float array."""
    pts = np.asarray(coords, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ParameterError(f"coordinates must have shape (n, 2), got {pts.shape}")
    if len(pts) < 2:
        raise ParameterError("at least two sites are required")
    if not np.all(np.isfinite(pts)):
        raise ParameterError("coordinates contain NaN or Inf")
    return pts


def kernel_value(spec, d):
    """Evaluate the kernel at distance(s) ``d``.

    Works elementwise on arrays; returns a float for scalar input.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or np.any(np.isnan(d)):
        raise DomainError("distances must be nonnegative")
    h = d / spec.range
    if spec.family is Family.EXPONENTIAL:
        out = np.exp(-h)
    elif spec.family is Family.GAUSSIAN:
        out = np.exp(-(h * h))
    else:
        out = np.where(h <= 1.0, 1.0 - 1.5 * h + 0.5 * h**3, 0.0)
    return float(out) if out.ndim == 0 else out


def estimate_range_mst(coords, seed=0):
    """Longest edge of the Euclidean minimum spanning tree.

    Prim's algorithm with distances evaluated on the fly: O(n^2) time and
    O(n) memory. Above the dense cap a seeded uniform subsample of
    ``MST_SUBSAMPLE`` points is used.
    """
    pts = as_coordinates(coords)
    n = len(pts)
    if n > dense_cap():
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n, size=min(MST_SUBSAMPLE, dense_cap()), replace=False))
        pts = pts[idx]
        n = len(pts)

    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best_from = np.hypot(pts[:, 0] - pts[0, 0], pts[:, 1] - pts[0, 1])
    best = np.where(in_tree, np.inf, best_from)
    longest = 0.0
    for _ in range(n - 1):
        j = int(np.argmin(best))  # lowest index wins ties
        longest = max(longest, float(best[j]))
        in_tree[j] = True
        best[j] = np.inf
        d = np.hypot(pts[:, 0] - pts[j, 0], pts[:, 1] - pts[j, 1])
        np.minimum(best, np.where(in_tree, np.inf, d), out=best)
    if longest <= 0.0:
        raise DegenerateError("all points coincide; MST range would be 0")
    return longest


def _nearest_center(pts, centers, block=2048):
    """Index of and squared distance to the closest center, in row blocks.

    Blocks stay small so the block-by-center distance matrix fits in cache.
    """
    n = len(pts)
    labels = np.empty(n, dtype=np.intp)
    nearest = np.empty(n)
    cc = np.einsum("ij,ij->i", centers, centers)
    for start in range(0, n, block):
        p = pts[start:start + block]
        d2 = cc[None, :] - 2.0 * p @ centers.T
        lab = np.argmin(d2, axis=1)
        labels[start:start + block] = lab
        best = d2[np.arange(len(p)), lab] + np.einsum("ij,ij->i", p, p)
        nearest[start:start + block] = np.maximum(best, 0.0)
    return labels, nearest


def _seed_centers(pts, L, rng):
    # k-means++ style: first center uniform, the rest drawn with
    # probability proportional to squared distance to the nearest center.
    n = len(pts)
    centers = np.empty((L, 2))
    centers[0] = pts[rng.integers(n)]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for k in range(1, L):
        total = d2.sum()
        if total <= 0:
            j = int(np.argmax(d2))
        else:
            j = int(rng.choice(n, p=d2 / total))
        centers[k] = pts[j]
        np.minimum(d2, np.sum((pts - pts[j]) ** 2, axis=1), out=d2)
    return centers


def select_knots(coords, L, seed=0):
    """k-means cluster centers used as Nystrom knots.

    Parameters
    ----------
    coords : array_like, shape (n, 2)
    L : int
        Number of knots, ``1 <= L <= n``.
    seed : int
        Seed for the center initialization.

    Returns
    -------
    KnotSet
    """
    pts = as_coordinates(coords)
    n = len(pts)
    L = int(L)
    if L < 1 or L > n:
        raise ParameterError(f"number of knots must be in [1, {n}], got {L}")
    if L == n and len(np.unique(pts, axis=0)) == n:
        return KnotSet(pts.copy(), seed)
    if L == 1:
        return KnotSet(pts.mean(axis=0, keepdims=True), seed)

    rng = np.random.default_rng(seed)
    centers = _seed_centers(pts, L, rng)
    tol = KMEANS_TOL * float(np.mean(np.var(pts, axis=0)))
    labels = None
    for _ in range(KMEANS_MAX_ITER):
        new, nearest = _nearest_center(pts, centers)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=L)
        sums = np.column_stack([np.bincount(labels, pts[:, k], L) for k in range(2)])
        empty = counts == 0
        old = centers.copy()
        centers[~empty] = sums[~empty] / counts[~empty, None]
        if not empty.any() and np.sum((centers - old) ** 2) <= tol:
            break
        if empty.any():
            for k in np.flatnonzero(empty):
                j = int(np.argmax(nearest))
                centers[k] = pts[j]
                nearest[j] = -1.0
    return KnotSet(centers, seed)


def build_connectivity(coords, spec, zero_diagonal=True, allow_large=False):
    """Dense n x n kernel matrix (``C`` when the diagonal is zeroed, else ``C+``).

    Raises :class:`DenseCapError` above the dense cap unless ``allow_large``.
    """
    pts = as_coordinates(coords)
    n = len(pts)
    if n > dense_cap() and not allow_large:
        raise DenseCapError(
            f"refusing to build a dense {n}x{n} matrix (cap {dense_cap()}); "
            "set MORANFILT_DENSE_CAP to override"
        )
    # pdist evaluates each pair once; squareform mirrors, so the result is
    # bitwise symmetric.
    C = squareform(kernel_value(spec, pdist(pts)))
    np.fill_diagonal(C, 0.0 if zero_diagonal else 1.0)
    return C


def build_cross_connectivity(coords, knots, spec):
    """n x L kernel matrix between sample sites and knots."""
    pts = as_coordinates(coords)
    K = knots.knots if isinstance(knots, KnotSet) else np.asarray(knots, dtype=float)
    if K.ndim != 2 or K.shape[1] != 2 or len(K) < 1:
        raise ParameterError("knots must have shape (L, 2) with L >= 1")
    return kernel_value(spec, cdist(pts, K))
