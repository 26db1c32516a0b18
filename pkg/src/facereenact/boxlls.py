"""Bound-constrained linear least squares by a reflective Newton method.

Minimises ||A x - b||^2 subject to lower <= x <= upper. Iterates stay
strictly feasible; each Newton system is scaled by the distance to the bound
the gradient points at (Coleman-Li affine scaling) and the step follows a
piecewise path that reflects off the box walls. Once the active bounds are
recognisable, the free variables are solved exactly on the face of the box,
which gives KKT points to working precision.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


# normal-equation systems up to this size are factorised densely
DENSE_LIMIT = 2000


class InfeasibleBoxError(ValueError):
    pass


@dataclass
class BoxLLSInfo:
    status: str
    iterations: int
    active_lower: np.ndarray
    active_upper: np.ndarray


def _solve(M, rhs):
    if sp.issparse(M):
        return np.atleast_1d(spla.spsolve(M.tocsc(), rhs))
    return np.linalg.solve(M, rhs)


def _cl_scaling(x, g, lower, upper):
    """Coleman-Li scaling vector v and the derivative of |v|."""
    v = np.ones_like(x)
    dv = np.zeros_like(x)
    up = (g < 0) & np.isfinite(upper)
    lo = (g >= 0) & np.isfinite(lower)
    v[up] = x[up] - upper[up]
    dv[up] = 1.0
    v[lo] = x[lo] - lower[lo]
    dv[lo] = 1.0
    v[(g < 0) & ~np.isfinite(upper)] = -1.0
    return v, dv


class _Quadratic:
    """q(x) = 0.5 x'Hx - c'x with H, c from the normal equations."""

    def __init__(self, H, c):
        self.H = H
        self.c = c

    def grad(self, x):
        return self.H @ x - self.c

    def value(self, x):
        return 0.5 * float(x @ (self.H @ x)) - float(self.c @ x)

    def curvature(self, d):
        return float(d @ (self.H @ d))


def _reflective_step(q, x, p, lower, upper, theta, max_reflections=8):
    """Best point along the reflected path starting at x in direction p."""
    best, fbest = x, q.value(x)
    y = x.copy()
    d = p.copy()
    for _ in range(max_reflections):
        with np.errstate(divide="ignore", invalid="ignore"):
            t_bound = np.where(d > 0, (upper - y) / d, np.where(d < 0, (lower - y) / d, np.inf))
        t_hit = float(np.min(t_bound)) if t_bound.size else np.inf
        slope = float(q.grad(y) @ d)
        if slope >= 0:
            break
        curv = q.curvature(d)
        t_opt = -slope / curv if curv > 0 else np.inf
        if t_opt < t_hit:
            cand = y + t_opt * d
            fc = q.value(cand)
            if fc < fbest:
                best, fbest = cand, fc
            break
        if not np.isfinite(t_hit):
            break
        cand = y + theta * t_hit * d
        fc = q.value(cand)
        if fc < fbest:
            best, fbest = cand, fc
        hit = t_bound <= t_hit * (1 + 1e-12)
        y = y + t_hit * d
        y[hit & (d > 0)] = upper[hit & (d > 0)]
        y[hit & (d < 0)] = lower[hit & (d < 0)]
        d[hit] = -d[hit]
    return best, fbest


def _active_set_finish(q, x, g, lower, upper, dist_tol, kkt_tol):
    """Fix near-active bounds, solve the free block exactly, verify KKT."""
    near_lo = (x - lower <= dist_tol) & (g > 0)
    near_up = (upper - x <= dist_tol) & (g < 0)
    active = near_lo | near_up
    y = x.copy()
    y[near_lo] = lower[near_lo]
    y[near_up] = upper[near_up]
    free = ~active
    if free.any():
        H = q.H
        if sp.issparse(H):
            H = H.tocsr()
            Hff = H[free][:, free]
            Hfa = H[free][:, active]
        else:
            Hff = H[np.ix_(free, free)]
            Hfa = H[np.ix_(free, active)]
        rhs = q.c[free] - (Hfa @ y[active] if active.any() else 0.0)
        try:
            y[free] = _solve(Hff, rhs)
        except (np.linalg.LinAlgError, RuntimeError):
            return None
    if np.any(y < lower) or np.any(y > upper):
        return None
    gy = q.grad(y)
    if np.any(np.abs(gy[free]) > kkt_tol):
        return None
    if np.any(gy[near_lo] < -kkt_tol) or np.any(gy[near_up] > kkt_tol):
        return None
    return y, near_lo, near_up


def solve_box_lls(A, b, lower, upper, ridge=0.0, tol=1e-12, max_iter=200,
                  x0=None, return_info=False):
    """Minimise ||A x - b||^2 over the box lower <= x <= upper.

    ``A`` may be a dense array or a scipy sparse matrix. ``ridge`` adds
    ridge * ||x||^2 for rank-deficient problems. Coordinates with
    lower == upper are fixed and removed before solving.
    """
    n = A.shape[1]
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    lower = np.broadcast_to(np.asarray(lower, dtype=np.float64), (n,)).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=np.float64), (n,)).copy()
    if np.any(lower > upper):
        raise InfeasibleBoxError("infeasible box: lower > upper for some coordinates")
    if A.shape[0] != b.size:
        raise ValueError(f"dimension mismatch: A has {A.shape[0]} rows, b has {b.size}")

    x = np.zeros(n)
    fixed = lower == upper
    x[fixed] = lower[fixed]
    free = ~fixed
    info = BoxLLSInfo("fixed", 0, fixed & False, fixed & False)
    if not free.any():
        info.active_lower = fixed.copy()
        return (x, info) if return_info else x

    if sp.issparse(A):
        A = A.tocsc()
        Af = A[:, np.flatnonzero(free)]
        bf = b - (A[:, np.flatnonzero(fixed)] @ x[fixed] if fixed.any() else 0.0)
        H = (Af.T @ Af).tocsc()
        if ridge:
            H = H + ridge * sp.identity(H.shape[0], format="csc")
        if H.shape[0] <= DENSE_LIMIT:
            H = H.toarray()
    else:
        A = np.asarray(A, dtype=np.float64)
        Af = A[:, free]
        bf = b - (A[:, fixed] @ x[fixed] if fixed.any() else 0.0)
        H = Af.T @ Af
        if ridge:
            H = H + ridge * np.eye(H.shape[0])
    c = np.asarray(Af.T @ bf).reshape(-1)
    lo, up = lower[free], upper[free]
    q = _Quadratic(H, c)
    kkt_tol = 1e-9 * max(np.linalg.norm(c), 1e-300)

    xf, status, it = _minimize_box_quadratic(q, lo, up, tol, max_iter, kkt_tol,
                                             None if x0 is None else np.asarray(x0)[free])
    x[free] = xf
    if return_info:
        g = q.grad(xf)
        al = np.zeros(n, bool)
        au = np.zeros(n, bool)
        al[free] = (xf == lo) & (g >= 0)
        au[free] = (xf == up) & (g <= 0)
        return x, BoxLLSInfo(status, it, al, au)
    return x


def _minimize_box_quadratic(q, lower, upper, tol, max_iter, kkt_tol, x0):
    try:
        x_unc = _solve(q.H, q.c)
    except np.linalg.LinAlgError:
        x_unc = None
    if x_unc is not None and np.all(np.isfinite(x_unc)) \
            and np.all(x_unc >= lower) and np.all(x_unc <= upper):
        return x_unc, "unconstrained", 0

    width = upper - lower
    margin = np.where(np.isfinite(width), 0.05 * width, 1.0)
    if x_unc is not None and np.all(np.isfinite(x_unc)):
        start = x_unc
    else:
        start = x0 if x0 is not None else np.zeros_like(lower)
    start = np.where(np.isfinite(start), start, 0.0)
    x = np.clip(start, lower + margin, upper - margin)
    scale = np.where(np.isfinite(width), np.maximum(width, 1e-300), 1.0)

    for it in range(1, max_iter + 1):
        g = q.grad(x)
        for dist in (1e-3, 1e-8):
            done = _active_set_finish(q, x, g, lower, upper, dist * scale, kkt_tol)
            if done is not None:
                return done[0], "converged", it
        v, dv = _cl_scaling(x, g, lower, upper)
        d = np.sqrt(np.abs(v))
        dg = d * g
        if np.linalg.norm(dg, np.inf) <= tol * max(1.0, np.linalg.norm(q.c, np.inf)):
            break
        if sp.issparse(q.H):
            D = sp.diags(d)
            M = (D @ q.H @ D + sp.diags(np.abs(g) * dv)).tocsc()
        else:
            M = (d[:, None] * q.H * d[None, :]) + np.diag(np.abs(g) * dv)
        try:
            s_hat = -_solve(M, dg)
        except np.linalg.LinAlgError:
            break
        p = d * s_hat
        theta = max(0.995, 1.0 - np.linalg.norm(dg))
        x_new, f_new = _reflective_step(q, x, p, lower, upper, theta)
        if not f_new < q.value(x):
            # scaled Newton direction stalled: fall back to scaled steepest descent
            x_new, f_new = _reflective_step(q, x, -d * dg, lower, upper, theta)
            if not f_new < q.value(x):
                break
        x = x_new
    g = q.grad(x)
    done = _active_set_finish(q, x, g, lower, upper, 1e-6 * scale, kkt_tol)
    if done is not None:
        return done[0], "converged", it
    return np.clip(x, lower, upper), "max_iter", it
