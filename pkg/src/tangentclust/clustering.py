"""Affinities for TGCT, GCT, SMC and SCR, spectral clustering, k-means and EKM.

Labels returned by the public functions are integers ``1..K``, numbered in
order of first appearance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import local_geometry as lg
from .exceptions import EigenFailure
from .manifolds import Grassmannian, Sphere, Spd
from .sparse_coding import SparseCodeProblem, solve_sparse_codes

METHODS = ("GCT", "TGCT", "SMC", "SCR", "EKM")


@dataclass
class TgctParams:
    K: int
    r: float
    eta: float
    sigma_d: float
    sigma_a: float

    def validate(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if not self.r > 0 or not self.sigma_d > 0 or not self.sigma_a > 0:
            raise ValueError("r, sigma_d and sigma_a must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")


@dataclass
class GctParams:
    K: int
    n_neighbors: int = 20
    sigma_d: float = 1.0
    sigma_a: float = 1.0
    tol: float = 1e-6
    max_iter: int = 1000
    angle_scope: str = "all"

    def validate(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.angle_scope not in ("all", "neighbors"):
            raise ValueError("angle_scope must be 'all' or 'neighbors'")
        if self.n_neighbors < 1:
            raise ValueError("n_neighbors must be >= 1")
        if not self.sigma_d > 0 or not self.sigma_a > 0:
            raise ValueError("sigma_d and sigma_a must be positive")


@dataclass
class SmcParams:
    K: int
    n_neighbors: int = 20
    sigma_d: float = 1.0
    weight_mode: str = "exponential"
    tol: float = 1e-6
    max_iter: int = 1000

    def validate(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.weight_mode not in ("linear", "exponential"):
            raise ValueError("weight_mode must be 'linear' or 'exponential'")


@dataclass
class ScrParams:
    K: int
    sigma: float = 1.0

    def validate(self):
        if self.K < 2 or not self.sigma > 0:
            raise ValueError("need K >= 2 and sigma > 0")


@dataclass
class EkmParams:
    K: int

    def validate(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")


def _check_size(points, K):
    if not 2 <= K <= len(points):
        raise ValueError(f"need 2 <= K <= N (K={K}, N={len(points)})")


# ---------------------------------------------------------------------------
# Affinities


def sparse_weights(geo, sigma_d=1.0, tol=1e-6, max_iter=1000):
    """Matrix ``S`` of sparse-coding weights, zero outside each neighborhood."""
    n = len(geo.points)
    S = np.zeros((n, n))
    rows, problems, cols = [], [], []
    for i, idx in enumerate(geo.neighborhoods.members):
        pos = np.searchsorted(geo.reach.members[i], idx)
        img = geo.images[i][pos]
        keep = idx != i
        if not keep.any():
            continue
        rows.append(i)
        cols.append(idx[keep])
        problems.append(SparseCodeProblem.from_images(img[keep], sigma_d))
    for i, j, code in zip(rows, cols, solve_sparse_codes(problems, tol, max_iter)):
        S[i, j] = code.coefficients
    return S


def _pair_mask(geo):
    mask = geo.neighborhoods.mask()
    mask = mask | mask.T
    np.fill_diagonal(mask, False)
    return mask


def gct_affinity(manifold, points, params, distances=None, images=None):
    """Soft affinity ``exp(|S_ij| + |S_ji|) * exp(-(theta_ij + theta_ji) / sigma_a)``.

    ``S`` is zero outside each neighborhood, so with ``angle_scope="all"``
    non-neighbor pairs keep the angle factor alone; ``"neighbors"`` zeroes
    them instead. The neighborhood radius is the mean distance to the
    ``n_neighbors``-th nearest point; tangent dimensions use the largest
    eigenvalue gap.
    """
    params.validate()
    _check_size(points, params.K)
    if distances is None:
        distances = lg.pairwise_distances(manifold, points)
    r = lg.choose_radius(distances, params.n_neighbors)
    extra = np.inf if params.angle_scope == "all" else None
    geo = lg.analyze(manifold, points, r, distances=distances, rule="gap", extra_radius=extra,
                     images=images)
    S = np.abs(sparse_weights(geo, params.sigma_d, params.tol, params.max_iter))
    theta = lg.geodesic_angles(geo)
    if params.angle_scope == "all":
        mask = ~np.eye(len(points), dtype=bool)
    else:
        mask = _pair_mask(geo)
    tsum = np.where(mask, theta + theta.T, 0.0)
    return np.where(mask, np.exp(S + S.T) * np.exp(-tsum / params.sigma_a), 0.0)


def smc_affinity(manifold, points, params, distances=None):
    """Sparse-manifold-clustering affinity: ``|S_ij| + |S_ji|`` or its exponential."""
    params.validate()
    _check_size(points, params.K)
    if distances is None:
        distances = lg.pairwise_distances(manifold, points)
    r = lg.choose_radius(distances, params.n_neighbors)
    geo = lg.analyze(manifold, points, r, distances=distances, rule=None)
    S = np.abs(sparse_weights(geo, params.sigma_d, params.tol, params.max_iter))
    mask = _pair_mask(geo)
    if params.weight_mode == "linear":
        return np.where(mask, S + S.T, 0.0)
    return np.where(mask, np.exp(S + S.T), 0.0)


def tgct_affinity(manifold, points, params, distances=None):
    """0/1 affinity: close, same estimated dimension, and small angle sum.

    Points whose neighborhood holds only themselves get no edges.
    """
    params.validate()
    _check_size(points, params.K)
    if distances is None:
        distances = lg.pairwise_distances(manifold, points)
    geo = lg.analyze(manifold, points, params.r, distances=distances, rule="threshold",
                     eta=params.eta, extra_radius=params.sigma_d)
    close = distances < params.sigma_d
    np.fill_diagonal(close, False)
    members = [np.flatnonzero(row) for row in close]
    theta = lg.geodesic_angles(geo, members)
    dims = geo.dims
    same_dim = (dims[:, None] == dims[None, :]) & (dims[:, None] > 0)
    with np.errstate(invalid="ignore"):
        small_angle = (theta + theta.T) < params.sigma_a
    return (close & same_dim & small_angle).astype(float)


def scr_affinity(distances, sigma=1.0):
    """Gaussian kernel ``exp(-d^2 / (2 sigma^2))`` on geodesic distances."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    d = np.asarray(distances, dtype=float)
    W = np.exp(-(d**2) / (2 * sigma**2))
    np.fill_diagonal(W, 0.0)
    return W


def apply_spatial_modifier(W, coords, sigma=0.1):
    """Damp ``W_ij`` by ``exp(-||c_i - c_j||^2 / sigma)`` for pixel coordinates ``c``."""
    W = np.asarray(W, dtype=float)
    c = np.asarray(coords, dtype=float)
    if c.ndim != 2 or len(c) != len(W) or W.shape != (len(c), len(c)):
        raise ValueError(f"coords of shape {c.shape} do not match W of shape {W.shape}")
    sq = np.sum((c[:, None, :] - c[None, :, :]) ** 2, axis=-1)
    return W * np.exp(-sq / sigma)


# ---------------------------------------------------------------------------
# k-means and spectral clustering


def _relabel(labels):
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(len(order), dtype=int)
    remap[order] = np.arange(1, len(order) + 1)
    return remap[np.unique(labels, return_inverse=True)[1]]


def _plus_plus(x, K, rng):
    n = len(x)
    centers = np.empty((K, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, K):
        total = d2.sum()
        j = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[c] = x[j]
        d2 = np.minimum(d2, np.sum((x - centers[c]) ** 2, axis=1))
    return centers


def _lloyd(x, centers, max_iter=300, rtol=1e-8):
    K = len(centers)
    prev = np.inf
    for _ in range(max_iter):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        inertia = d2[np.arange(len(x)), labels].sum()
        for c in range(K):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
            else:
                far = int(np.argmax(d2[np.arange(len(x)), labels]))
                centers[c] = x[far]
                labels[far] = c
                d2[far, c] = 0.0
        if prev - inertia <= rtol * max(prev, 1e-300) and np.isfinite(prev):
            break
        prev = inertia
    d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(x)), labels].sum()


def kmeans(points, K, seed=0, restarts=20, return_inertia=False):
    """Best-of-``restarts`` Lloyd k-means with k-means++ seeding."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if not 1 <= K <= len(x):
        raise ValueError(f"need 1 <= K <= N (K={K}, N={len(x)})")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        labels, inertia = _lloyd(x, _plus_plus(x, K, rng))
        if best is None or inertia < best[1] - 1e-12:
            best = (labels, inertia)
    labels = _relabel(best[0])
    return (labels, float(best[1])) if return_inertia else labels


TIE_TOL = 1e-9


def spectral_embedding(W, K):
    """Rows of the top-``K`` eigenvectors of ``D^-1/2 W D^-1/2``, unit-normalized.

    When the ``K``-th eigenvalue is tied with the next ones (a graph with more
    than ``K`` connected components has eigenvalue 1 with that multiplicity)
    every tied eigenvector is kept, since any ``K`` of them would be an
    arbitrary basis choice.
    """
    W = np.asarray(W, dtype=float)
    N = len(W)
    deg = W.sum(axis=1)
    deg[deg <= 0] = 1.0
    isq = 1.0 / np.sqrt(deg)
    A = W * isq[:, None] * isq[None, :]
    A = 0.5 * (A + A.T)
    top = min(K + 1, N)
    try:
        lam, U = scipy.linalg.eigh(A, subset_by_index=[N - top, N - 1])
        if U.shape[1] != top or (top > K and lam[1] >= lam[0] - TIE_TOL):
            # ties past the K-th eigenvalue, or the subset driver came back
            # short on tightly clustered eigenvalues
            lam, U = scipy.linalg.eigh(A)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenFailure(str(exc)) from exc
    if not np.all(np.isfinite(lam)):
        raise EigenFailure("non-finite eigenvalues")
    lam, U = lam[::-1], U[:, ::-1]
    m = K + int(np.count_nonzero(lam[K:] >= lam[K - 1] - TIE_TOL))
    U = U[:, :m]
    # sign convention: largest-magnitude entry of each column is positive
    piv = np.argmax(np.abs(U), axis=0)
    U = U * np.sign(U[piv, np.arange(m)])
    norms = np.linalg.norm(U, axis=1)
    nz = norms > 1e-12
    U[nz] /= norms[nz, None]
    U[~nz] = 0.0
    return U


def spectral_cluster(W, K, seed=0, restarts=20):
    """Normalized spectral clustering of a symmetric nonnegative affinity.

    k-means runs on the embedded rows sorted lexicographically, so the
    result does not depend on the order in which points are given.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("affinity must be square")
    if not 1 <= K <= len(W):
        raise ValueError(f"need 1 <= K <= N (K={K}, N={len(W)})")
    U = spectral_embedding(W, K)
    order = np.lexsort(np.round(U, 10).T[::-1])
    labels = kmeans(U[order], K, seed=seed, restarts=restarts)
    out = np.empty(len(W), dtype=int)
    out[order] = labels
    return _relabel(out)


# ---------------------------------------------------------------------------
# Euclidean embeddings and the method dispatcher


def embed_euclidean(manifold, points):
    """Embed points in R^m: sphere as is, SPD by scaled upper triangle, G(p,l) by ``X X^T``."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    if isinstance(manifold, Sphere):
        return points.reshape(n, -1).copy()
    if isinstance(manifold, Spd):
        iu = np.triu_indices(manifold.p)
        scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
        return points[:, iu[0], iu[1]] * scale
    if isinstance(manifold, Grassmannian):
        proj = points @ np.swapaxes(points, 1, 2)
        return proj.reshape(n, -1)
    raise TypeError(f"no Euclidean embedding for {manifold!r}")


@dataclass
class ClusterResult:
    labels: np.ndarray
    affinity_ms: float = 0.0
    spectral_ms: float = 0.0
    total_ms: float = 0.0
    affinity: np.ndarray = field(default=None, repr=False)


def _assign_isolated(labels, W, distances):
    """Give every zero-degree point the label of its nearest connected point."""
    iso = W.sum(axis=1) <= 0
    if not iso.any() or iso.all():
        return labels
    labels = labels.copy()
    conn = np.flatnonzero(~iso)
    for i in np.flatnonzero(iso):
        labels[i] = labels[conn[np.argmin(distances[i, conn])]]
    return _relabel(labels)


def default_params(method, K):
    return {"GCT": GctParams, "SMC": SmcParams, "SCR": ScrParams, "EKM": EkmParams}[method](K)


def run_method(method, manifold, points, params, seed=0):
    """Run one clustering method end to end and time its stages."""
    method = method.upper()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    params.validate()
    points = np.asarray(points, dtype=float)
    t0 = time.perf_counter()
    if method == "EKM":
        labels = kmeans(embed_euclidean(manifold, points), params.K, seed=seed)
        total = (time.perf_counter() - t0) * 1e3
        return ClusterResult(labels, 0.0, total, total)

    images = None
    if method == "GCT" and params.angle_scope == "all":
        # every pair needs a log image anyway; distances come with them
        distances, images = lg.pairwise_geometry(manifold, points)
    else:
        distances = lg.pairwise_distances(manifold, points)
    if method == "GCT":
        W = gct_affinity(manifold, points, params, distances, images)
    elif method == "SMC":
        W = smc_affinity(manifold, points, params, distances)
    elif method == "TGCT":
        W = tgct_affinity(manifold, points, params, distances)
    else:
        W = scr_affinity(distances, params.sigma)
    t1 = time.perf_counter()
    labels = spectral_cluster(W, params.K, seed=seed)
    labels = _assign_isolated(labels, W, distances)
    t2 = time.perf_counter()
    return ClusterResult(labels, (t1 - t0) * 1e3, (t2 - t1) * 1e3, (t2 - t0) * 1e3, W)
