"""Distribution regression: a logit fit of 1{Y <= u} on X for each threshold u."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .data import Dataset
from .qr import CoefEstimate, CoefProcess

MAX_ITER = 100
SEPARATION_BOUND = 30.0


class SeparationError(RuntimeError):
    def __init__(self, message, u=None):
        super().__init__(message)
        self.u = u


class DRFitError(RuntimeError):
    def __init__(self, message, u=None):
        super().__init__(message)
        self.u = u


def logistic_cdf(s):
    return expit(s)


def logistic_pdf(s):
    e = expit(s)
    return e * (1.0 - e)


def loglik(x, d, theta) -> float:
    """Bernoulli log-likelihood of labels ``d`` under the logit model."""
    s = x @ theta
    # log(Lambda(s)) = -log1p(exp(-s)), log(1 - Lambda(s)) = -log1p(exp(s))
    return float(-np.sum(np.where(d, np.logaddexp(0.0, -s), np.logaddexp(0.0, s))))


def dr_fit(data: Dataset, u: float, *, tol: float | None = None) -> CoefEstimate:
    """Logit maximum likelihood for the indicator 1{Y <= u}.

    Damped Newton from zero.  Raises :class:`SeparationError` when all labels
    agree or when a coefficient diverges past the separation bound.
    """
    x, y = data.x, data.y
    n = data.n
    d = y <= u
    k = int(d.sum())
    if k == 0 or k == n:
        raise SeparationError(
            f"threshold u={u} leaves all {n} observations on one side", u=float(u)
        )
    tol = 1e-10 * n if tol is None else tol
    theta = np.zeros(data.p)
    ll = loglik(x, d, theta)
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        prob = expit(x @ theta)
        grad = x.T @ (d - prob)
        if np.max(np.abs(grad)) <= tol:
            converged = True
            break
        hess = (x * (prob * (1.0 - prob))[:, None]).T @ x
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while True:
            cand = theta + t * step
            ll_new = loglik(x, d, cand)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        theta = cand
        ll = ll_new
        if np.max(np.abs(theta)) > SEPARATION_BOUND:
            raise SeparationError(
                f"coefficients diverge at u={u} (|theta| > {SEPARATION_BOUND}); "
                "the labels are (quasi-)separated",
                u=float(u),
            )
    else:
        prob = expit(x @ theta)
        grad = x.T @ (d - prob)
        converged = bool(np.max(np.abs(grad)) <= tol)
    return CoefEstimate(
        u=float(u), theta=theta, converged=converged, objective=-ll, iterations=it,
        info={"score_max": float(np.max(np.abs(grad)))},
    )


def dr_process(data: Dataset, grid) -> CoefProcess:
    """Distribution regression coefficients on a strictly increasing grid of thresholds."""
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("empty grid")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    y = data.y
    bad = [float(u) for u in grid if not (np.any(y <= u) and np.any(y > u))]
    if bad:
        raise SeparationError(f"no variation in 1{{Y <= u}} at u = {bad}", u=bad[0])
    rows = []
    for u in grid:
        est = dr_fit(data, float(u))
        if not est.converged:
            raise DRFitError(f"distribution regression did not converge at u={u}", u=float(u))
        rows.append(est.theta)
    return CoefProcess(grid, np.array(rows))
