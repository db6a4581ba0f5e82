"""Sphere, Grassmannian and SPD manifolds with exact exp/log/distance.

Points are plain ndarrays in a canonical ambient representation:

* ``Sphere(D)``: unit vectors of length ``D + 1``.
* ``Grassmannian(p, l)``: ``p x l`` matrices with orthonormal columns, equal
  up to right multiplication by an ``l x l`` orthogonal matrix.
* ``Spd(p)``: symmetric positive-definite ``p x p`` matrices with the
  affine-invariant metric.

``log`` and ``dist`` accept a single base point and either a single target or
a stack of targets with leading batch axes, which is how the clustering code
maps whole neighborhoods at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import CutLocus, InvalidPoint, ManifoldMismatch, TangencyViolation

TANGENCY_TOL = 1e-8
POINT_TOL = 1e-10
PAIR_COND_LIMIT = 1e4


@dataclass
class Diagnostic:
    """Outcome of :meth:`Manifold.validate`.

    ``errors`` maps an invariant name to the size of its violation (or to
    ``None`` when the violation has no natural magnitude, e.g. a wrong shape).
    """

    errors: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not self.errors

    def __bool__(self):
        return self.ok

    def __str__(self):
        if self.ok:
            return "ok"
        return "; ".join(f"{k}={v}" for k, v in self.errors.items())


class Manifold:
    """Common interface. Subclasses are frozen dataclasses used as manifold ids."""

    tag: str = ""

    @property
    def shape(self) -> tuple:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        """Intrinsic dimension."""
        raise NotImplementedError

    @property
    def ambient_size(self) -> int:
        return int(np.prod(self.shape))

    def params(self) -> tuple:
        raise NotImplementedError

    # -- shape checks -----------------------------------------------------

    def _check(self, a, batch=False, what="point"):
        a = np.asarray(a, dtype=float)
        nd = len(self.shape)
        if a.ndim < nd or a.shape[a.ndim - nd:] != self.shape or (not batch and a.ndim != nd):
            raise ManifoldMismatch(
                f"{what} of shape {a.shape} does not match {self!r} (expected {self.shape})"
            )
        return a

    # -- construction / validation ----------------------------------------

    def point(self, data):
        """Normalize ``data`` onto the manifold (unit norm, QR, symmetrization)."""
        raise NotImplementedError

    def validate(self, x) -> Diagnostic:
        raise NotImplementedError

    # -- geometry ---------------------------------------------------------

    def log(self, x, y):
        raise NotImplementedError

    def exp(self, x, v):
        raise NotImplementedError

    def dist(self, x, y):
        return self.norm(x, self.log(x, y))

    def norm(self, x, v):
        """Riemannian norm of tangent vector(s) ``v`` at ``x``."""
        v = np.asarray(v, dtype=float)
        nd = len(self.shape)
        return np.sqrt(np.sum(v * v, axis=tuple(range(v.ndim - nd, v.ndim))))

    def proj(self, x, w):
        """Orthogonal projection of the ambient array ``w`` onto the tangent space at ``x``."""
        raise NotImplementedError

    def tangency_error(self, x, v) -> float:
        x = self._check(x)
        v = self._check(v, what="tangent vector")
        return float(np.max(np.abs(v - self.proj(x, v)), initial=0.0))

    def check_tangent(self, x, v, tol=TANGENCY_TOL):
        err = self.tangency_error(x, v)
        if err > tol:
            raise TangencyViolation(f"vector is not tangent at base point (error {err:.3g})")

    def log_coords(self, x, y):
        """Log map of ``y`` at ``x`` flattened into isometric coordinates.

        Euclidean inner products of the returned rows equal the Riemannian
        metric at ``x``. Returns shape ``(..., ambient_size)``.
        """
        v = self.log(x, y)
        nd = len(self.shape)
        return v.reshape(v.shape[: v.ndim - nd] + (-1,))

    def pairwise_dist(self, points):
        """Symmetric distance matrix with a zero diagonal, from the upper triangle."""
        points = self._check(points, batch=True)
        n = len(points)
        dist = np.zeros((n, n))
        for i in range(n - 1):
            try:
                dist[i, i + 1 :] = self.dist(points[i], points[i + 1 :])
            except CutLocus as exc:
                raise CutLocus(f"row {i}: {exc}") from exc
        return dist + dist.T

    def pairwise_log_coords(self, points):
        """``out[i, j] = log_coords(points[i], points[j])``; cut-locus pairs give NaN rows."""
        points = self._check(points, batch=True)
        n = len(points)
        out = np.full((n, n, self.ambient_size), np.nan)
        for i in range(n):
            try:
                out[i] = self.log_coords(points[i], points)
            except CutLocus:
                for j in range(n):
                    try:
                        out[i, j] = self.log_coords(points[i], points[j])
                    except CutLocus:
                        pass
        return out

    def random_point(self, rng):
        raise NotImplementedError

    def random_tangent(self, x, rng, scale=1.0):
        v = self.proj(x, rng.standard_normal(self.shape))
        n = self.norm(x, v)
        return v * (scale / n) if n > 0 else v


def _sign_fixed_qr(a):
    q, r = np.linalg.qr(a)
    s = np.sign(np.diagonal(r, axis1=-2, axis2=-1)).copy()
    s[s == 0] = 1.0
    return q * s[..., None, :]


def thin_svd(a, compute_uv=True, max_sweeps=30):
    """Batched SVD of tall matrices ``(..., p, l)`` by one-sided Jacobi rotations.

    Much faster than LAPACK on large stacks of tiny matrices; exact after a
    single rotation when ``l == 2``. Singular values come out descending;
    columns of ``u`` for zero singular values are zero.
    """
    a = np.array(a, dtype=float)
    l = a.shape[-1]
    v = np.broadcast_to(np.eye(l), a.shape[:-2] + (l, l)).copy()
    eps = np.finfo(float).eps
    for _ in range(max_sweeps):
        rotated = False
        for i in range(l - 1):
            for j in range(i + 1, l):
                ai, aj = a[..., i], a[..., j]
                alpha = np.einsum("...p,...p->...", ai, ai)
                beta = np.einsum("...p,...p->...", aj, aj)
                gamma = np.einsum("...p,...p->...", ai, aj)
                act = np.abs(gamma) > eps * np.sqrt(alpha * beta)
                if not act.any():
                    continue
                rotated = True
                g = np.where(act, gamma, 1.0)
                zeta = (beta - alpha) / (2 * g)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1 + zeta * zeta))
                t = np.where(act, t, 0.0)
                c = 1 / np.sqrt(1 + t * t)
                sn = c * t
                for m in (a, v):
                    mi, mj = m[..., i].copy(), m[..., j]
                    m[..., i] = c[..., None] * mi - sn[..., None] * mj
                    m[..., j] = sn[..., None] * mi + c[..., None] * mj
        if not rotated or l == 2:
            break
    sv = np.linalg.norm(a, axis=-2)
    order = np.argsort(-sv, axis=-1)
    sv = np.take_along_axis(sv, order, axis=-1)
    if not compute_uv:
        return sv
    a = np.take_along_axis(a, order[..., None, :], axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    nz = sv > 0
    u = np.where(nz[..., None, :], a / np.where(nz, sv, 1.0)[..., None, :], 0.0)
    return u, sv, np.swapaxes(v, -1, -2)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sphere(Manifold):
    """Unit sphere S^D in R^(D+1)."""

    D: int
    tag = "sphere"

    def __post_init__(self):
        if self.D < 1:
            raise ValueError("sphere dimension must be >= 1")

    @property
    def shape(self):
        return (self.D + 1,)

    @property
    def dim(self):
        return self.D

    def params(self):
        return (self.D,)

    def point(self, data):
        x = self._check(data)
        n = np.linalg.norm(x)
        if not np.isfinite(n) or n == 0:
            raise InvalidPoint("cannot normalize a zero or non-finite vector")
        return x / n

    def validate(self, x):
        d = Diagnostic()
        try:
            x = self._check(x)
        except ManifoldMismatch:
            d.errors["shape"] = None
            return d
        err = abs(np.linalg.norm(x) - 1.0)
        if not np.isfinite(err) or err > POINT_TOL:
            d.errors["norm_error"] = float(err)
        return d

    def proj(self, x, w):
        x = self._check(x)
        w = self._check(w, batch=True, what="ambient array")
        return w - (w @ x)[..., None] * x

    def _log_and_angle(self, x, y):
        x = self._check(x)
        y = self._check(y, batch=True)
        c = np.clip(y @ x, -1.0, 1.0)
        w = y - c[..., None] * x
        s = np.linalg.norm(w, axis=-1)
        theta = np.arctan2(s, c)
        return w, s, c, theta

    def log(self, x, y):
        w, s, c, theta = self._log_and_angle(x, y)
        if np.any(np.abs(c + 1.0) < 1e-12):
            raise CutLocus("target is antipodal to the base point")
        # theta / sin(theta) with sin(theta) = s; series near theta = 0
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(s > 1e-8, theta / np.where(s > 0, s, 1.0), 1.0 + theta**2 / 6.0)
        return w * scale[..., None]

    def dist(self, x, y):
        _, _, _, theta = self._log_and_angle(x, y)
        return theta

    def pairwise_log_coords(self, points):
        x = self._check(points, batch=True)
        c = np.clip(x @ x.T, -1.0, 1.0)
        w = x[None, :, :] - c[..., None] * x[:, None, :]
        s = np.linalg.norm(w, axis=-1)
        theta = np.arctan2(s, c)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(s > 1e-8, theta / np.where(s > 0, s, 1.0), 1.0 + theta**2 / 6.0)
        out = w * scale[..., None]
        out[np.abs(c + 1.0) < 1e-12] = np.nan
        return out

    def exp(self, x, v):
        x = self._check(x)
        v = self._check(v, what="tangent vector")
        self.check_tangent(x, v)
        t = np.linalg.norm(v)
        if t == 0:
            return x.copy()
        y = np.cos(t) * x + (np.sin(t) / t) * v
        return y / np.linalg.norm(y)

    def injectivity_radius(self):
        return np.pi

    def random_point(self, rng):
        return self.point(rng.standard_normal(self.shape))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grassmannian(Manifold):
    """Grassmannian G(p, l) of l-dimensional subspaces of R^p."""

    p: int
    l: int  # noqa: E741
    tag = "grassmannian"

    def __post_init__(self):
        if not 1 <= self.l < self.p:
            raise ValueError("Grassmannian requires 1 <= l < p")

    @property
    def shape(self):
        return (self.p, self.l)

    @property
    def dim(self):
        return self.l * (self.p - self.l)

    def params(self):
        return (self.p, self.l)

    def point(self, data):
        a = self._check(data)
        if np.linalg.matrix_rank(a) < self.l:
            raise InvalidPoint("spanning vectors are linearly dependent")
        return _sign_fixed_qr(a)

    def validate(self, x):
        d = Diagnostic()
        try:
            x = self._check(x)
        except ManifoldMismatch:
            d.errors["shape"] = None
            return d
        err = np.max(np.abs(x.T @ x - np.eye(self.l)))
        if not np.isfinite(err) or err > POINT_TOL:
            d.errors["orthonormality_error"] = float(err)
        return d

    def proj(self, x, w):
        x = self._check(x)
        w = self._check(w, batch=True, what="ambient array")
        return w - x @ (x.T @ w)

    def _svd_of_log(self, x, y):
        x = self._check(x, batch=True)
        y = self._check(y, batch=True)
        xty = np.swapaxes(x, -1, -2) @ y
        m = y - x @ xty
        # a = m @ inv(xty); its singular values are the tangents of the principal angles
        try:
            with np.errstate(all="ignore"):
                a = np.swapaxes(np.linalg.solve(np.swapaxes(xty, -1, -2),
                                                np.swapaxes(m, -1, -2)), -1, -2)
                u, s, vt = thin_svd(a)
        except np.linalg.LinAlgError:
            raise CutLocus("subspaces have a principal angle of pi/2") from None
        if not np.all(s < 1e12):
            raise CutLocus("subspaces have a principal angle of pi/2")
        return u, s, vt

    def log(self, x, y):
        u, s, vt = self._svd_of_log(x, y)
        return (u * np.arctan(s)[..., None, :]) @ vt

    def pairwise_dist(self, points):
        x = self._check(points, batch=True)
        n = len(x)
        i, j = np.triu_indices(n, 1)
        xty = np.swapaxes(x[i], -1, -2) @ x[j]
        cos = thin_svd(xty, compute_uv=False)
        sin = thin_svd(x[j] - x[i] @ xty, compute_uv=False)[..., ::-1]
        ang = np.arctan2(sin, np.clip(cos, 0.0, None))
        dist = np.zeros((n, n))
        dist[i, j] = np.sqrt(np.sum(ang**2, axis=-1))
        return dist + dist.T

    def pairwise_log_coords(self, points):
        x = self._check(points, batch=True)
        n = len(x)
        try:
            u, sv, vt = self._svd_of_log(x[:, None], x[None, :])
        except CutLocus:
            return super().pairwise_log_coords(points)
        return ((u * np.arctan(sv)[..., None, :]) @ vt).reshape(n, n, -1)

    def principal_angles(self, x, y):
        """Principal angles between span(x) and span(y), ascending.

        Defined for every pair, including orthogonal subspaces.
        """
        x = self._check(x)
        y = self._check(y, batch=True)
        xty = np.einsum("pi,...pj->...ij", x, y)
        cos = thin_svd(xty, compute_uv=False)
        sin = thin_svd(y - x @ xty, compute_uv=False)[..., ::-1]
        return np.arctan2(sin, np.clip(cos, 0.0, None))

    def dist(self, x, y):
        return np.sqrt(np.sum(self.principal_angles(x, y) ** 2, axis=-1))

    def exp(self, x, v):
        x = self._check(x)
        v = self._check(v, what="tangent vector")
        self.check_tangent(x, v)
        if not v.any():
            return x.copy()
        u, s, vt = np.linalg.svd(v, full_matrices=False)
        y = (x @ vt.T) * np.cos(s) @ vt + (u * np.sin(s)) @ vt
        return _sign_fixed_qr(y)

    def injectivity_radius(self):
        return np.pi / 2

    def random_point(self, rng):
        return self.point(rng.standard_normal(self.shape))


# ---------------------------------------------------------------------------


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _eig_fun(a, fun):
    w, v = np.linalg.eigh(_sym(a))
    return (v * fun(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


@dataclass(frozen=True)
class Spd(Manifold):
    """Symmetric positive-definite p x p matrices, affine-invariant metric."""

    p: int
    tag = "spd"

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("SPD size must be >= 1")

    @property
    def shape(self):
        return (self.p, self.p)

    @property
    def dim(self):
        return self.p * (self.p + 1) // 2

    def params(self):
        return (self.p,)

    def point(self, data):
        a = _sym(self._check(data))
        if np.linalg.eigvalsh(a)[0] <= 0:
            raise InvalidPoint("matrix is not positive definite")
        return a

    def validate(self, x):
        d = Diagnostic()
        try:
            x = self._check(x)
        except ManifoldMismatch:
            d.errors["shape"] = None
            return d
        asym = np.max(np.abs(x - x.T))
        if not np.isfinite(asym) or asym > POINT_TOL:
            d.errors["symmetry_error"] = float(asym)
            return d
        lmin = np.linalg.eigvalsh(_sym(x))[0]
        if not lmin > 0:
            d.errors["not_positive_definite"] = float(lmin)
        return d

    def proj(self, x, w):
        self._check(x)
        return _sym(self._check(w, batch=True, what="ambient array"))

    def _roots(self, x):
        w, v = np.linalg.eigh(self._check(x))
        sq = (v * np.sqrt(w)) @ v.T
        isq = (v / np.sqrt(w)) @ v.T
        return sq, isq

    def _whitened_log(self, x, y):
        _, isq = self._roots(x)
        y = self._check(y, batch=True)
        return _eig_fun(isq @ y @ isq, np.log)

    def log(self, x, y):
        sq, _ = self._roots(x)
        return sq @ self._whitened_log(x, y) @ sq

    def log_coords(self, x, y):
        lw = self._whitened_log(x, y)
        return lw.reshape(lw.shape[:-2] + (-1,))

    def pairwise_log_coords(self, points):
        # One eigendecomposition serves both directions of a pair. With
        # C = x_j^-1/2 x_i^1/2, B = C C^T is x_i whitened at x_j, and x_j
        # whitened at x_i is A = (C^T C)^-1. If B = U diag(lam) U^T then
        # log A = -C^T U diag(log(lam) / lam) U^T C.
        x = self._check(points, batch=True)
        n = len(x)
        w, v = np.linalg.eigh(_sym(x))
        vt = np.swapaxes(v, -1, -2)
        sq = (v * np.sqrt(w)[:, None, :]) @ vt
        isq = (v / np.sqrt(w)[:, None, :]) @ vt
        i, j = np.triu_indices(n, 1)
        c = isq[j] @ sq[i]
        lam, u = np.linalg.eigh(_sym(c @ np.swapaxes(c, -1, -2)))
        ut = np.swapaxes(u, -1, -2)
        loglam = np.log(lam)
        out = np.zeros((n, n, self.p, self.p))
        out[j, i] = (u * loglam[:, None, :]) @ ut
        out[i, j] = -_sym(np.swapaxes(c, -1, -2) @ ((u * (loglam / lam)[:, None, :]) @ ut) @ c)
        # the derived direction loses about cond(B) * eps; redo bad pairs directly
        bad = lam[:, -1] > PAIR_COND_LIMIT * lam[:, 0]
        if bad.any():
            bi, bj = i[bad], j[bad]
            out[bi, bj] = _eig_fun(isq[bi] @ x[bj] @ isq[bi], np.log)
            out[bj, bi] = _eig_fun(isq[bj] @ x[bi] @ isq[bj], np.log)
        return out.reshape(n, n, -1)

    def norm(self, x, v):
        _, isq = self._roots(x)
        v = self._check(v, batch=True, what="tangent vector")
        return np.linalg.norm(isq @ v @ isq, axis=(-2, -1))

    def dist(self, x, y):
        _, isq = self._roots(x)
        y = self._check(y, batch=True)
        w = np.linalg.eigvalsh(_sym(isq @ y @ isq))
        return np.sqrt(np.sum(np.log(w) ** 2, axis=-1))

    def exp(self, x, v):
        x = self._check(x)
        v = self._check(v, what="tangent vector")
        self.check_tangent(x, v)
        if not v.any():
            return x.copy()
        sq, isq = self._roots(x)
        return _sym(sq @ _eig_fun(isq @ v @ isq, np.exp) @ sq)

    def injectivity_radius(self):
        return np.inf

    def random_point(self, rng):
        a = rng.standard_normal(self.shape)
        return self.point(a @ a.T + 0.5 * np.eye(self.p))


MANIFOLD_TYPES = {cls.tag: cls for cls in (Sphere, Grassmannian, Spd)}


def manifold_from_tag(tag, params):
    """Rebuild a manifold from its serialized ``tag`` and integer parameters."""
    try:
        cls = MANIFOLD_TYPES[tag]
    except KeyError:
        raise ValueError(f"unknown manifold tag {tag!r}") from None
    return cls(*(int(p) for p in params))


def log_map(manifold, base, target):
    return manifold.log(base, target)


def exp_map(manifold, base, v):
    return manifold.exp(base, v)


def geodesic_distance(manifold, x, y):
    return manifold.dist(x, y)


def project_to_tangent(manifold, base, w):
    return manifold.proj(base, w)
