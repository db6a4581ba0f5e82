"""Neighborhoods, log-mapped local covariances and empirical geodesic angles.

Tangent vectors are flattened row-major into the isometric coordinates
returned by :meth:`Manifold.log_coords`, so every tangent space is treated as
a linear subspace of one fixed Euclidean space and no per-point basis is ever
built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import AllZeroSpectrum, CutLocus, DegenerateNeighborhood

ZERO_VECTOR_TOL = 1e-12


def pairwise_distances(manifold, points):
    """Symmetric matrix of geodesic distances with an exactly zero diagonal."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n < 2:
        raise ValueError("need at least two points")
    return manifold.pairwise_dist(points)


def choose_radius(distances, n):
    """Mean over all points of the distance to their ``n``-th nearest other point."""
    distances = np.asarray(distances, dtype=float)
    N = len(distances)
    if not 1 <= n < N:
        raise ValueError(f"neighbor count must satisfy 1 <= n < N (got n={n}, N={N})")
    off = ~np.eye(N, dtype=bool)
    others = np.sort(distances[off].reshape(N, N - 1), axis=1)
    return float(np.mean(others[:, n - 1]))


@dataclass
class Neighborhoods:
    """Index sets ``J(x_i, r) = {j : dist(x_i, x_j) < r}``; each contains ``i``."""

    radius: float
    members: list
    distances: np.ndarray

    def __len__(self):
        return len(self.members)

    def mask(self):
        m = np.zeros(self.distances.shape, dtype=bool)
        for i, idx in enumerate(self.members):
            m[i, idx] = True
        return m


def build_neighborhoods(distances, r):
    distances = np.asarray(distances, dtype=float)
    if not r > 0:
        raise ValueError("radius must be positive")
    inside = distances < r
    np.fill_diagonal(inside, True)
    return Neighborhoods(float(r), [np.flatnonzero(row) for row in inside], distances)


# ---------------------------------------------------------------------------
# Spectra


def gram_eigen(vectors):
    """Eigenpairs of ``X^T X`` computed from the small Gram matrix ``X X^T``.

    Parameters
    ----------
    vectors : ndarray, shape (k, D)
        One flattened vector per row.

    Returns
    -------
    eigenvalues : ndarray, shape (min(k, D),)
        Descending, clipped at zero.
    eigenvectors : ndarray, shape (D, min(k, D))
        Unit columns in ambient coordinates. Columns whose eigenvalue is
        numerically zero are left as zero vectors.
    """
    x = np.atleast_2d(np.asarray(vectors, dtype=float))
    k, D = x.shape
    w, u = np.linalg.eigh(x @ x.T)
    order = np.argsort(w)[::-1][: min(k, D)]
    w = np.clip(w[order], 0.0, None)
    vecs = x.T @ u[:, order]
    norms = np.sqrt(w)
    keep = norms > max(norms[0], 1.0) * 1e-12 if len(norms) else norms > 0
    vecs[:, keep] /= norms[keep]
    vecs[:, ~keep] = 0.0
    return w, vecs


@dataclass
class TangentEstimate:
    """Estimated tangent subspace at one data point.

    ``eigenvalues`` (descending) and ``eigenvectors`` describe the local
    covariance of the log-mapped neighborhood; the first ``dim`` eigenvectors
    span the estimate. ``dim == 0`` marks a degenerate neighborhood.
    """

    index: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    dim: int = 0

    @property
    def basis(self):
        return self.eigenvectors[:, : self.dim]

    def with_dim(self, dim):
        return TangentEstimate(self.index, self.eigenvalues, self.eigenvectors, int(dim))


def covariance_spectrum(images):
    """Spectrum of the population covariance of the rows of ``images``."""
    images = np.asarray(images, dtype=float)
    centered = images - images.mean(axis=0)
    return gram_eigen(centered / np.sqrt(len(images)))


def local_covariance(manifold, points, nbhd, i):
    """Eigen-decomposed local covariance of ``{log_{x_i}(x_j) : j in J(x_i, r)}``."""
    idx = nbhd.members[i]
    if len(idx) < 2:
        raise DegenerateNeighborhood(f"point {i} has {len(idx)} neighbor(s)")
    points = np.asarray(points, dtype=float)
    images = manifold.log_coords(points[i], points[idx])
    w, v = covariance_spectrum(images)
    return TangentEstimate(i, w, v)


def estimate_dimension_threshold(eigenvalues, eta):
    """Number of eigenvalues strictly above ``eta`` times the largest one."""
    lam = np.asarray(eigenvalues, dtype=float)
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if lam.size == 0 or not lam[0] > 0:
        raise AllZeroSpectrum("largest eigenvalue is not positive")
    return max(1, int(np.count_nonzero(lam > eta * lam[0])))


def estimate_dimension_gap(eigenvalues, max_dim=None):
    """Position of the largest gap ``lambda_m - lambda_{m+1}``, smallest ``m`` on ties."""
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size < 2:
        return 1
    top = lam.size - 1 if max_dim is None else max(1, min(lam.size - 1, int(max_dim)))
    gaps = lam[:top] - lam[1 : top + 1]
    return int(np.argmax(gaps)) + 1


def elevation_angles(vectors, basis):
    """Angles in [0, pi/2] between each row of ``vectors`` and ``span(basis)``."""
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    basis = np.asarray(basis, dtype=float).reshape(v.shape[1], -1)
    along = v @ basis
    inside = along @ basis.T
    perp = np.linalg.norm(v - inside, axis=1)
    par = np.linalg.norm(along, axis=1)
    theta = np.arctan2(perp, par)
    theta[np.linalg.norm(v, axis=1) < ZERO_VECTOR_TOL] = 0.0
    # no log image (cut locus): no directional agreement
    theta[np.isnan(theta)] = np.pi / 2
    return theta


# ---------------------------------------------------------------------------
# Whole-dataset analysis


@dataclass
class LocalGeometry:
    """Per-point log images and tangent estimates for one dataset.

    ``images[i]`` holds ``log_{x_i}(x_j)`` for ``j in members[i]`` in
    isometric coordinates (row ``members[i] == i`` is the zero vector).
    """

    manifold: object
    points: np.ndarray
    distances: np.ndarray
    neighborhoods: Neighborhoods
    images: list
    estimates: list
    reach: Neighborhoods = None

    @property
    def dims(self):
        return np.array([e.dim for e in self.estimates])


def log_images(manifold, points, members, allow_cut_locus=False):
    """``log_{x_i}(x_j)`` for ``j in members[i]``, as a list of ``(len, D)`` arrays.

    With ``allow_cut_locus`` a pair in the cut locus yields a NaN row instead
    of raising.
    """
    points = np.asarray(points, dtype=float)
    out = []
    for i, idx in enumerate(members):
        try:
            img = manifold.log_coords(points[i], points[idx])
        except CutLocus as exc:
            if not allow_cut_locus:
                raise CutLocus(f"row {i}: {exc}") from exc
            img = np.full((len(idx), manifold.ambient_size), np.nan)
            for a, j in enumerate(idx):
                try:
                    img[a] = manifold.log_coords(points[i], points[j])
                except CutLocus:
                    pass
        img[idx == i] = 0.0
        out.append(img)
    return out


def pairwise_geometry(manifold, points):
    """Log images of every pair together with the distance matrix they imply.

    ``dist(x_i, x_j) = ||log_{x_i}(x_j)||`` in isometric coordinates, so one
    pass of log maps serves both. Pairs in the cut locus get a NaN image and
    their distance from :meth:`Manifold.dist`.

    Returns
    -------
    distances : ndarray, shape (N, N)
    images : list of ndarray, shape (N, D) each
        ``images[i][j] = log_{x_i}(x_j)``.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n < 2:
        raise ValueError("need at least two points")
    flat = manifold.pairwise_log_coords(points)
    flat[np.arange(n), np.arange(n)] = 0.0
    images = list(flat)
    dist = np.linalg.norm(flat, axis=2)
    for i, j in zip(*np.nonzero(np.isnan(dist))):
        dist[i, j] = manifold.dist(points[i], points[j])
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    return dist, images


def batched_spectra(images):
    """Local covariance spectra for every neighborhood in one padded eigh call."""
    n = len(images)
    D = images[0].shape[1]
    sizes = np.array([len(img) for img in images])
    kmax = int(sizes.max())
    padded = np.zeros((n, kmax, D))
    for i, img in enumerate(images):
        padded[i, : len(img)] = (img - img.mean(axis=0)) / np.sqrt(len(img))
    gram = padded @ np.swapaxes(padded, 1, 2)
    w, u = np.linalg.eigh(gram)
    w = np.clip(w[:, ::-1], 0.0, None)
    vecs = np.swapaxes(padded, 1, 2) @ u[:, :, ::-1]
    out = []
    for i in range(n):
        r = min(int(sizes[i]), D)
        wi = w[i, :r]
        vi = vecs[i][:, :r]
        norms = np.sqrt(wi)
        keep = norms > max(norms[0] if r else 0.0, 1.0) * 1e-12
        vi[:, keep] /= norms[keep]
        vi[:, ~keep] = 0.0
        out.append((wi, vi))
    return out


def analyze(manifold, points, radius, *, distances=None, rule="gap", eta=None,
            extra_radius=None, images=None):
    """Log images, local spectra and tangent dimensions for every point.

    Parameters
    ----------
    rule : {"gap", "threshold", None}
        Dimension estimator; ``"threshold"`` needs ``eta``. ``None`` skips
        the covariance step and leaves ``estimates`` empty.
    extra_radius : float, optional
        Log images are kept for ``j`` within ``max(radius, extra_radius)``
        (angles are needed beyond the covariance neighborhood in TGCT).
        Covariances always use the ``radius`` neighborhood only.
    images : list of ndarray, optional
        All-pairs log images as returned by :func:`pairwise_geometry`;
        skips recomputing them.
    """
    points = np.asarray(points, dtype=float)
    if distances is None:
        distances = pairwise_distances(manifold, points)
    nbhd = build_neighborhoods(distances, radius)
    outer = radius if extra_radius is None else max(radius, extra_radius)
    reach = build_neighborhoods(distances, outer) if outer > radius else nbhd
    if images is None:
        images = log_images(manifold, points, reach.members, allow_cut_locus=outer > radius)
    else:
        images = [images[i][idx] for i, idx in enumerate(reach.members)]
        if not outer > radius and any(np.isnan(img).any() for img in images):
            raise CutLocus("a neighborhood contains a cut-locus pair")

    if rule is None:
        return LocalGeometry(manifold, points, distances, nbhd, images, [], reach)
    inner_images = []
    for i, idx in enumerate(reach.members):
        inner_images.append(images[i][np.isin(idx, nbhd.members[i])])
    spectra = batched_spectra(inner_images)
    estimates = []
    for i, (w, v) in enumerate(spectra):
        est = TangentEstimate(i, w, v)
        if len(nbhd.members[i]) >= 2 and w.size and w[0] > 0:
            if rule == "gap":
                dim = estimate_dimension_gap(w, manifold.dim)
            elif rule == "threshold":
                dim = estimate_dimension_threshold(w, eta)
            else:
                raise ValueError(f"unknown dimension rule {rule!r}")
            est = est.with_dim(dim)
        estimates.append(est)
    return LocalGeometry(manifold, points, distances, nbhd, images, estimates, reach)


def geodesic_angles(geo, members=None):
    """Dense matrix of empirical geodesic angles ``theta_ij``.

    Entries are computed for ``j in members[i]`` (default: the log-image
    reach of ``geo``); all others are NaN. The diagonal is zero.
    """
    reach = geo.reach.members if members is None else members
    n = len(geo.points)
    theta = np.full((n, n), np.nan)
    for i, idx in enumerate(reach):
        pos = np.searchsorted(geo.reach.members[i], idx)
        vecs = geo.images[i][pos]
        theta[i, idx] = elevation_angles(vecs, geo.estimates[i].basis)
    np.fill_diagonal(theta, 0.0)
    return theta
