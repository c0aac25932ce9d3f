"""Linear quantile regression by a primal-dual interior point method.

The check-loss problem is solved through its bounded dual LP

    max_a  y'a   s.t.  X'a = (1 - u) X'1,  0 <= a <= 1,

with a Frisch-Newton (Mehrotra predictor-corrector) iteration.  The solver
is vectorised over quantile levels, so a whole process on a grid is one
batched solve.  The interior point limit is then polished to an exact basic
solution whenever that does not increase the objective.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset

MAX_ITER = 200
STEP_DAMPING = 0.99995


class QRFitError(RuntimeError):
    def __init__(self, message, u=None, estimate=None):
        super().__init__(message)
        self.u = u
        self.estimate = estimate


@dataclass(frozen=True)
class CoefEstimate:
    u: float
    theta: np.ndarray
    converged: bool = True
    objective: float = 0.0
    iterations: int = 0
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CoefProcess:
    """Coefficient estimates on a strictly increasing grid of index values."""

    grid: np.ndarray
    thetas: np.ndarray  # (len(grid), p)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float).reshape(-1)
        t = np.asarray(self.thetas, dtype=float)
        if t.ndim == 1:
            t = t.reshape(-1, 1)
        if t.shape[0] != g.size:
            raise ValueError("grid and thetas have different lengths")
        if g.size > 1 and np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "thetas", t)

    def at(self, u: float) -> np.ndarray:
        """Row at the grid point nearest to ``u``."""
        return self.thetas[int(np.argmin(np.abs(self.grid - u)))]


def check_loss(resid, u):
    """Check function (u - 1{r < 0}) r, elementwise."""
    resid = np.asarray(resid, dtype=float)
    return resid * (u - (resid < 0))


def qr_objective(y, x, theta, u) -> float:
    return float(np.sum(check_loss(y - x @ theta, u)))


def _step_to_boundary(v, dv):
    """Largest step t with v + t dv >= 0, per row (inf when unconstrained)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dv < 0, -v / dv, np.inf)
    return ratio.min(axis=1)


def _fnm_batch(X, y, taus, tol, max_iter=MAX_ITER, beta=STEP_DAMPING):
    """Batched Frisch-Newton solve; returns (coef (G,p), iterations (G,), gap (G,))."""
    n, p = X.shape
    G = taus.size
    c = -y
    b = (1.0 - taus)[:, None] * X.sum(axis=0)[None, :]

    # dual start: least squares fit of c on X
    y0 = np.linalg.lstsq(X, c, rcond=None)[0]
    r0 = c - X @ y0
    z0 = np.maximum(r0, 0.0)
    w0 = z0 - r0
    # keep dual slacks strictly positive
    bump = 1e-3 * (np.abs(r0).mean() + 1.0)
    z0 = z0 + bump
    w0 = w0 + bump

    xv = np.repeat((1.0 - taus)[:, None], n, axis=1)
    sv = 1.0 - xv
    yd = np.repeat(y0[None, :], G, axis=0)
    z = np.repeat(z0[None, :], G, axis=0)
    w = np.repeat(w0[None, :], G, axis=0)

    coef = np.empty((G, p))
    iters = np.zeros(G, dtype=int)
    gaps = np.full(G, np.inf)
    active = np.arange(G)

    for it in range(1, max_iter + 1):
        q = 1.0 / (z / xv + w / sv)
        r = z - w
        Q = np.einsum("gi,ij,ik->gjk", q, X, X)
        rhs = (q * r) @ X
        dy = np.linalg.solve(Q, rhs[..., None])[..., 0]
        dx = q * (dy @ X.T - r)
        ds = -dx
        dz = -z * (dx / xv + 1.0)
        dw = -w * (ds / sv + 1.0)
        fp = np.minimum(beta * np.minimum(_step_to_boundary(xv, dx), _step_to_boundary(sv, ds)), 1.0)
        fd = np.minimum(beta * np.minimum(_step_to_boundary(w, dw), _step_to_boundary(z, dz)), 1.0)

        corr = np.minimum(fp, fd) < 1.0
        if np.any(corr):
            k = corr
            mu = np.sum(z[k] * xv[k] + w[k] * sv[k], axis=1)
            g = np.sum(
                (z[k] + fd[k, None] * dz[k]) * (xv[k] + fp[k, None] * dx[k])
                + (w[k] + fd[k, None] * dw[k]) * (sv[k] + fp[k, None] * ds[k]),
                axis=1,
            )
            mu = mu * (g / mu) ** 3 / (2.0 * n)
            dxdz = dx[k] * dz[k]
            dsdw = ds[k] * dw[k]
            xinv = 1.0 / xv[k]
            sinv = 1.0 / sv[k]
            xi = mu[:, None] * (xinv - sinv)
            rhs2 = rhs[k] + (q[k] * (dxdz - dsdw - xi)) @ X
            dy_k = np.linalg.solve(Q[k], rhs2[..., None])[..., 0]
            dx_k = q[k] * (dy_k @ X.T + xi - r[k] - dxdz + dsdw)
            ds_k = -dx_k
            dz_k = mu[:, None] * xinv - z[k] - xinv * z[k] * dx_k - dxdz
            dw_k = mu[:, None] * sinv - w[k] - sinv * w[k] * ds_k - dsdw
            dy[k], dx[k], ds[k], dz[k], dw[k] = dy_k, dx_k, ds_k, dz_k, dw_k
            fp[k] = np.minimum(
                beta * np.minimum(_step_to_boundary(xv[k], dx_k), _step_to_boundary(sv[k], ds_k)), 1.0
            )
            fd[k] = np.minimum(
                beta * np.minimum(_step_to_boundary(w[k], dw_k), _step_to_boundary(z[k], dz_k)), 1.0
            )

        xv = xv + fp[:, None] * dx
        sv = sv + fp[:, None] * ds
        yd = yd + fd[:, None] * dy
        w = w + fd[:, None] * dw
        z = z + fd[:, None] * dz

        gap = xv @ c - np.sum(yd * b[active], axis=1) + w.sum(axis=1)
        done = gap < tol
        if np.any(done) or it == max_iter:
            idx = active[done] if it < max_iter else active
            sel = done if it < max_iter else np.ones(active.size, dtype=bool)
            coef[idx] = -yd[sel]
            iters[idx] = it
            gaps[idx] = gap[sel]
            keep = ~sel
            active = active[keep]
            if active.size == 0:
                break
            xv, sv, yd, w, z = xv[keep], sv[keep], yd[keep], w[keep], z[keep]
    return coef, iters, gaps


def _polish(X, y, taus, coef):
    """Replace each interior-point solution by a nearby basic solution when no worse."""
    n, p = X.shape
    resid = y[None, :] - coef @ X.T
    basis = np.argsort(np.abs(resid), axis=1, kind="stable")[:, :p]
    Xh = X[basis]  # (G, p, p)
    yh = y[basis]
    out = coef.copy()
    ok = np.abs(np.linalg.det(Xh)) > 1e-12 * np.prod(np.abs(Xh).max(axis=1) + 1e-300, axis=1)
    if not np.any(ok):
        return out
    cand = np.linalg.solve(Xh[ok], yh[ok][..., None])[..., 0]
    t = taus[ok]
    obj_old = np.sum(check_loss(resid[ok], t[:, None]), axis=1)
    obj_new = np.sum(check_loss(y[None, :] - cand @ X.T, t[:, None]), axis=1)
    better = obj_new <= obj_old + 1e-12 * (1.0 + np.abs(obj_old))
    rows = np.flatnonzero(ok)[better]
    out[rows] = cand[better]
    return out


def solve_qr(X, y, taus, tol=None, polish=True):
    """Quantile regression coefficients for each level in ``taus``.

    Returns ``(coef (G, p), iterations (G,), converged (G,))``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    n = X.shape[0]
    scale = np.mean(np.abs(y - np.median(y))) + 1e-300
    if tol is None:
        tol = 1e-8 * n * max(scale, 1.0)
    coef, iters, gaps = _fnm_batch(X, y, taus, tol)
    converged = gaps < tol
    if polish:
        coef = _polish(X, y, taus, coef)
    return coef, iters, converged


def qr_fit(data: Dataset, u: float, *, polish: bool = True) -> CoefEstimate:
    """Check-loss minimiser at quantile level ``u``.

    Non-convergence within the iteration cap is reported through
    ``converged=False``, not raised.
    """
    if not 0.0 < u < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {u}")
    coef, iters, conv = solve_qr(data.x, data.y, [u], polish=polish)
    theta = coef[0]
    return CoefEstimate(
        u=float(u),
        theta=theta,
        converged=bool(conv[0]),
        objective=qr_objective(data.y, data.x, theta, u),
        iterations=int(iters[0]),
    )


def _basis_interval(X, Xsum, h, resid):
    """Range of u over which basis ``h`` stays optimal, plus the binding exit.

    Returns ``(lo, hi, k, leave_positive)`` where ``k`` is the position in
    ``h`` whose dual coefficient hits a bound at ``hi``.
    """
    Xh = X[h]
    nb = np.ones(X.shape[0], dtype=bool)
    nb[h] = False
    S1 = Xsum - Xh.sum(axis=0)
    S2 = X[nb & (resid < 0)].sum(axis=0)
    a = np.linalg.solve(Xh.T, -S1)
    b = np.linalg.solve(Xh.T, S2)
    # d(u) = a u + b must satisfy u - 1 <= d(u) <= u
    slope = a - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        up_hi = np.where(slope > 0, -b / slope, np.inf)  # d hits u
        lo_hi = np.where(slope < 0, (b + 1.0) / -slope, np.inf)  # d hits u - 1
        up_lo = np.where(slope < 0, -b / slope, -np.inf)
        lo_lo = np.where(slope > 0, -(b + 1.0) / slope, -np.inf)
    lo = max(up_lo.max(), lo_lo.max())
    k1, k2 = int(np.argmin(up_hi)), int(np.argmin(lo_hi))
    if up_hi[k1] <= lo_hi[k2]:
        return lo, up_hi[k1], k1, True
    return lo, lo_hi[k2], k2, False


def _parametric_path(X, y, grid, theta0, max_pivots=None):
    """Follow the exact solution path u -> theta(u) across ``grid`` by simplex pivots.

    Returns ``(thetas, n_done)``; rows past ``n_done`` were not reached
    because of a degenerate pivot and must be filled by another solver.
    """
    n, p = X.shape
    G = grid.size
    out = np.empty((G, p))
    scale = np.abs(y).max() + 1.0
    tol_r = 1e-9 * scale
    resid = y - X @ theta0
    h = np.argsort(np.abs(resid), kind="stable")[:p]
    if np.any(np.abs(resid[h]) > tol_r) or abs(np.linalg.det(X[h])) < 1e-12:
        return out, 0
    theta = np.linalg.solve(X[h], y[h])
    resid = y - X @ theta
    resid[h] = 0.0
    Xsum = X.sum(axis=0)
    g = 0
    max_pivots = max_pivots or 50 * n
    u_cur = grid[0]
    for _ in range(max_pivots):
        lo, hi, k, leave_pos = _basis_interval(X, Xsum, h, resid)
        if lo > u_cur + 1e-9:
            return out, g
        while g < G and grid[g] <= hi:
            out[g] = theta
            g += 1
        if g == G:
            return out, g
        u_cur = hi
        rhs = np.zeros(p)
        rhs[k] = -1.0 if leave_pos else 1.0
        delta = np.linalg.solve(X[h], rhs)
        xd = X @ delta
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(xd != 0, resid / xd, np.inf)
        t[h] = np.inf
        t[t <= 0] = np.inf
        e = int(np.argmin(t))
        if not np.isfinite(t[e]) or t[e] <= 1e-12 * scale:
            return out, g
        h = h.copy()
        h[k] = e
        Xh = X[h]
        if abs(np.linalg.det(Xh)) < 1e-12:
            return out, g
        theta = np.linalg.solve(Xh, y[h])
        resid = y - X @ theta
        resid[h] = 0.0
    return out, g


def qr_process(data: Dataset, grid, *, method: str = "path", chunk: int = 64) -> CoefProcess:
    """Quantile regression process on ``grid``; each row equals ``qr_fit`` at that level.

    ``method="path"`` fits the first level and walks the exact solution path
    through the grid by parametric simplex pivots, falling back to the
    batched interior point solver if the path degenerates (tied data).
    ``method="ipm"`` solves every level independently.
    """
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("empty grid")
    if np.any(grid <= 0) or np.any(grid >= 1):
        raise ValueError("grid must lie inside (0, 1)")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    X, y = data.x, data.y
    thetas = np.empty((grid.size, data.p))
    done = 0
    if method == "path":
        first = qr_fit(data, float(grid[0]))
        if first.converged:
            thetas, done = _parametric_path(X, y, grid, first.theta)
    elif method != "ipm":
        raise ValueError(f"unknown method {method!r}")
    for start in range(done, grid.size, chunk):
        taus = grid[start : start + chunk]
        coef, _, conv = solve_qr(X, y, taus)
        if not np.all(conv):
            bad = taus[~conv][0]
            raise QRFitError(f"quantile regression did not converge at u={bad}", u=float(bad))
        thetas[start : start + taus.size] = coef
    return CoefProcess(grid, thetas)
