"""Distance-weighted sparse coding with a sum-to-one constraint.

For every data point the clustering methods solve

    minimize   || q - sum_j S_j y_j ||^2 + sum_j w_j |S_j|
    subject to sum_j S_j = 1

where ``y_j`` are the log images of its neighbors, ``q`` is its own log image
(the zero vector) and ``w_j = exp(||q - y_j|| / sigma_d)``.

The solver is ADMM with the splitting S = Z: the S-step is an equality
constrained quadratic solved through a small KKT system, the Z-step is
weighted soft-thresholding. Problems of different sizes are padded and
solved together, which is what keeps a whole dataset's worth of codes cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyCandidates


@dataclass
class SparseCodeProblem:
    candidates: np.ndarray
    weights: np.ndarray
    query: np.ndarray = None

    def __post_init__(self):
        self.candidates = np.atleast_2d(np.asarray(self.candidates, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.query is None:
            self.query = np.zeros(self.candidates.shape[1])
        self.query = np.asarray(self.query, dtype=float).reshape(-1)
        if len(self.weights) != len(self.candidates):
            raise ValueError("one weight per candidate is required")

    @classmethod
    def from_images(cls, candidates, sigma_d=1.0, query=None):
        """Build a problem with the exponential distance penalty weights."""
        candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
        q = np.zeros(candidates.shape[1]) if query is None else np.asarray(query, dtype=float)
        w = np.exp(np.linalg.norm(candidates - q, axis=1) / sigma_d)
        return cls(candidates, w, q)

    @property
    def size(self):
        return len(self.candidates)

    def objective(self, coefficients):
        s = np.asarray(coefficients, dtype=float)
        resid = self.query - s @ self.candidates
        return float(resid @ resid + self.weights @ np.abs(s))


@dataclass
class SparseCode:
    coefficients: np.ndarray
    objective: float
    iterations: int
    converged: bool = True
    trace: list = field(default_factory=list)


def _fix_sum(s, mask):
    # exact sum-to-one after roundoff, spread over the active entries
    k = mask.sum(axis=-1)
    return s + mask * ((1.0 - s.sum(axis=-1)) / k)[..., None]


def _objectives(s, gram, yq, qq, w):
    gs = (gram @ s[..., None])[..., 0]
    return (s * gs).sum(-1) - 2 * (s * yq).sum(-1) + qq + (w * np.abs(s)).sum(-1)


class _ConstrainedRidge:
    """Batched solver for ``min ||q - Y^T s||^2 + rho/2 ||s - c||^2`` s.t. ``sum(s) = 1``.

    With ``Y = U diag(sv) V^T`` the system matrix ``2 Y Y^T + rho I`` inverts
    as ``(I - U diag(2 sv^2 / (2 sv^2 + rho)) U^T) / rho``, so each solve costs
    ``O(k rank)`` and a change of ``rho`` needs no refactorization.
    """

    def __init__(self, cand, mask):
        sq, v = np.linalg.eigh(np.swapaxes(cand, 1, 2) @ cand)
        sq = np.clip(sq, 0.0, None)
        u = cand @ v
        norms = np.sqrt(sq)
        keep = norms > 1e-12 * np.maximum(norms.max(axis=1, keepdims=True), 1.0)
        u = np.where(keep[:, None, :], u / np.where(keep, norms, 1.0)[:, None, :], 0.0)
        self.sq = np.where(keep, sq, 0.0)
        self.U = u
        self.mask = mask
        self.Ut1 = np.einsum("nkr,nk->nr", u, mask)

    def subset(self, keep):
        out = object.__new__(_ConstrainedRidge)
        out.sq, out.U, out.mask, out.Ut1 = self.sq[keep], self.U[keep], self.mask[keep], self.Ut1[keep]
        return out

    def _apply(self, b, utb, c, rho):
        return (b - (self.U @ (c * utb)[..., None])[..., 0]) / rho[:, None]

    def solve(self, b, rho):
        # s = H^-1 b - H^-1 1 * (1^T H^-1 b - 1) / (1^T H^-1 1)
        c = 2 * self.sq / (2 * self.sq + rho[:, None])
        utb = (b[:, None, :] @ self.U)[:, 0]
        hb = self._apply(b, utb, c, rho)
        h1 = self._apply(self.mask, self.Ut1, c, rho)
        mu = ((hb * self.mask).sum(1) - 1.0) / (h1 * self.mask).sum(1)
        return (hb - h1 * mu[:, None]) * self.mask


def kkt_residual(s, gram, yq, w, mask=None):
    """Largest violation of the optimality conditions at a feasible ``s``.

    With ``g`` the gradient of the quadratic term and ``nu`` the multiplier
    of the sum constraint: ``g_j + w_j sign(s_j) + nu = 0`` on the support and
    ``|g_j + nu| <= w_j`` off it.
    """
    if mask is None:
        mask = np.ones(len(s), dtype=bool)
    g = 2 * (gram @ s - yq)
    active = mask & (np.abs(s) > 1e-12)
    if not active.any():
        return np.inf
    r_act = g[active] + w[active] * np.sign(s[active])
    nu = -np.mean(r_act)
    off = mask & ~active
    viol = np.abs(r_act + nu).max()
    if off.any():
        viol = max(viol, np.max(np.abs(g[off] + nu) - w[off], initial=0.0))
    return float(viol)


def _support_solve(idx, sgn, gram, yq, w):
    """Stationary point with support ``idx`` and signs ``sgn``: ``(s_idx, nu)`` or None."""
    m = len(idx)
    kkt = np.zeros((m + 1, m + 1))
    kkt[:m, :m] = 2 * gram[np.ix_(idx, idx)]
    kkt[:m, m] = 1.0
    kkt[m, :m] = 1.0
    rhs = np.append(2 * yq[idx] - w[idx] * sgn, 1.0)
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    if not np.all(np.abs(kkt @ sol - rhs) <= 1e-9 + 1e-5 * np.abs(rhs)):
        return None
    return sol[:m], sol[m]


def _polish(s, gram, yq, w, mask, tol=1e-6, max_steps=6):
    """Exact solution guessed from the support and signs of ``s``; None on failure.

    A few active-set corrections are allowed: coordinates whose sign flips
    leave the support and the worst off-support violation enters it.
    """
    idx = np.flatnonzero(mask & (np.abs(s) > 1e-9))
    sgn = np.sign(s[idx])
    for _ in range(max_steps):
        if idx.size == 0:
            return None
        res = _support_solve(idx, sgn, gram, yq, w)
        if res is None:
            return None
        sol, nu = res
        flipped = np.sign(sol) != sgn
        if flipped.any():
            idx, sgn = idx[~flipped], sgn[~flipped]
            continue
        out = np.zeros_like(s)
        out[idx] = sol
        off = mask.copy()
        off[idx] = False
        if not off.any():
            return out
        g = 2 * (gram @ out - yq) + nu
        viol = np.where(off, np.abs(g) - w, -np.inf)
        j = int(np.argmax(viol))
        if viol[j] <= tol:
            return out
        pos = np.searchsorted(idx, j)
        idx = np.insert(idx, pos, j)
        sgn = np.insert(sgn, pos, -np.sign(g[j]))
    return None


def solve_sparse_codes(problems, tol=1e-6, max_iter=1000, rho=1.0, record_trace=False,
                       check_every=40):
    """Solve many problems at once; returns one :class:`SparseCode` per problem.

    Every ``check_every`` iterations the current support is re-solved exactly
    and a problem stops as soon as that candidate meets the optimality
    conditions to ``tol``, or when both ADMM residuals drop below ``tol``.
    The returned coefficients are the best feasible iterate seen, so the
    recorded objective trace never increases.
    """
    problems = list(problems)
    if not problems:
        return []
    for p in problems:
        if p.size == 0:
            raise EmptyCandidates("sparse coding needs at least one candidate")
    n = len(problems)
    k = max(p.size for p in problems)
    mask = np.zeros((n, k), dtype=bool)
    dim = max(p.candidates.shape[1] for p in problems)
    cand = np.zeros((n, k, dim))
    gram = np.zeros((n, k, k))
    yq = np.zeros((n, k))
    qq = np.zeros(n)
    w = np.zeros((n, k))
    for i, p in enumerate(problems):
        m = p.size
        mask[i, :m] = True
        cand[i, :m, : p.candidates.shape[1]] = p.candidates
        gram[i, :m, :m] = p.candidates @ p.candidates.T
        yq[i, :m] = p.candidates @ p.query
        qq[i] = p.query @ p.query
        w[i, :m] = p.weights
    fmask = mask.astype(float)

    best = fmask / fmask.sum(axis=1, keepdims=True)
    best_obj = _objectives(best, gram, yq, qq, w)
    done = mask.sum(axis=1) == 1
    best[done] = fmask[done]
    iters = np.zeros(n, dtype=int)
    traces = [[float(b)] for b in best_obj] if record_trace else None

    live = np.flatnonzero(~done)
    G, YQ, QQ, W, M = gram[live], yq[live], qq[live], w[live], fmask[live]
    W_thr = np.where(M > 0, W, np.inf)
    R = np.full(len(live), float(rho))
    ridge = _ConstrainedRidge(cand[live], M)
    z = best[live].copy()
    u = np.zeros_like(z)

    it = 0
    while it < max_iter and len(live):
        it += 1
        s = _fix_sum(ridge.solve(2 * YQ + R[:, None] * (z - u), R), M)
        v = s + u
        z_old = z
        z = np.sign(v) * np.maximum(np.abs(v) - W_thr / R[:, None], 0.0)
        u = u + s - z
        iters[live] = it

        r_pri = np.linalg.norm(s - z, axis=1)
        r_dual = R * np.linalg.norm(z - z_old, axis=1)
        finished = (r_pri < tol) & (r_dual < tol)
        check = it % check_every == 0 or it == max_iter

        if check or finished.any() or record_trace:
            obj = _objectives(s, G, YQ, QQ, W)
            better = obj < best_obj[live]
            best[live[better]] = s[better]
            best_obj[live[better]] = obj[better]

        # residual stops still carry O(tol) mass off the support; polish them too
        for a in np.flatnonzero(finished | check):
            i = live[a]
            cands = [_fix_sum(z[a], fmask[i])]
            pol = _polish(z[a], gram[i], yq[i], w[i], mask[i], tol)
            if pol is not None:
                pol = _fix_sum(pol, fmask[i])
                if kkt_residual(pol, gram[i], yq[i], w[i], mask[i]) < tol:
                    cands.append(pol)
                    finished[a] = True
            if finished[a]:
                for c in cands:
                    c_obj = _objectives(c, gram[i], yq[i], qq[i], w[i])
                    if c_obj <= best_obj[i]:
                        best[i] = c
                        best_obj[i] = c_obj

        if check:
            up = r_pri > 10 * r_dual
            down = r_dual > 10 * r_pri
            scale = np.where(up, 2.0, np.where(down, 0.5, 1.0))
            R = R * scale
            u = u / scale[:, None]

        if record_trace:
            for i in live:
                traces[i].append(float(best_obj[i]))
        if finished.any():
            done[live[finished]] = True
            keep = ~finished
            live = live[keep]
            G, YQ, QQ, W, M, W_thr = G[keep], YQ[keep], QQ[keep], W[keep], M[keep], W_thr[keep]
            R, z, u = R[keep], z[keep], u[keep]
            ridge = ridge.subset(keep)

    out = []
    for i, p in enumerate(problems):
        coef = best[i, : p.size].copy()
        out.append(SparseCode(coef, p.objective(coef), int(iters[i]), bool(done[i]),
                              traces[i] if record_trace else []))
    return out


def solve_sparse_code(problem, tol=1e-6, max_iter=1000, rho=1.0, record_trace=False):
    """Solve a single problem. ``converged`` is False when ``max_iter`` ran out."""
    return solve_sparse_codes([problem], tol, max_iter, rho, record_trace)[0]


def brute_force_code_oracle(problem, grid_step=0.01, box=3.0):
    """Exhaustive search over the constraint set inside ``[-box, box]^k`` (k <= 3)."""
    k = problem.size
    if k == 0:
        raise EmptyCandidates("sparse coding needs at least one candidate")
    if k > 3:
        raise ValueError("brute-force oracle supports at most 3 candidates")
    if k == 1:
        s = np.ones((1, 1))
    else:
        grid = np.arange(-box, box + grid_step / 2, grid_step)
        axes = np.meshgrid(*([grid] * (k - 1)), indexing="ij")
        free = np.stack([a.ravel() for a in axes], axis=1)
        last = 1.0 - free.sum(axis=1)
        s = np.column_stack([free, last])
        s = s[np.abs(last) <= box + 1e-12]
    resid = problem.query[None, :] - s @ problem.candidates
    obj = np.einsum("nd,nd->n", resid, resid) + np.abs(s) @ problem.weights
    j = int(np.argmin(obj))
    return SparseCode(s[j].copy(), float(obj[j]), len(s), True)
