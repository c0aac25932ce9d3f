"""Alternative derivative estimators: a smoothed coefficient process and augmented QR."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data import Dataset
from .derivative import MomDerivWarning, qr_theta_u
from .kernels import KernelSpec, kappa_moment, kbar, kernel_cdf, kernel_eval
from .qr import CoefProcess, qr_fit

GL_NODES = 21
MAX_EVALS = 2000


def smoothing_grid(u: float, h: float, step: float) -> np.ndarray:
    """Grid ``u + k step`` covering ``[u - h, u + h]`` inside the open unit interval."""
    if step <= 0 or h <= 0:
        raise ValueError("step and bandwidth must be positive")
    m = int(np.ceil(h / step - 1e-9))
    g = u + step * np.arange(-m, m + 1)
    return g[(g > 0.0) & (g < 1.0)]


def smoothed_process_deriv(process: CoefProcess, u: float, kernel: KernelSpec) -> np.ndarray:
    """Local-linear slope of each coefficient path at ``u``.

    Minimises ``int (theta(v) - theta(u) - b (v - u))^2 K_h(v - u) dv`` over
    ``v`` in ``(0, 1)``, with the integral replaced by the trapezoid rule on
    the process grid.  The kernel moments use the same rule, so straight
    lines are reproduced to rounding error.
    """
    g = process.grid
    h = kernel.h
    iu = int(np.argmin(np.abs(g - u)))
    steps = np.diff(g)
    step = float(steps.max()) if steps.size else np.inf
    if abs(g[iu] - u) > 1e-9:
        raise ValueError(f"u={u} is not a point of the process grid")
    if step > h / 10.0 + 1e-12:
        raise ValueError(f"grid step {step:g} exceeds h/10 = {h / 10:g}")
    lo, hi = max(u - h, 0.0), min(u + h, 1.0)
    if g[0] > lo + step + 1e-12 or g[-1] < hi - step - 1e-12:
        raise ValueError(f"process grid [{g[0]}, {g[-1]}] does not cover [{lo}, {hi}]")
    sel = (g >= u - h - 1e-12) & (g <= u + h + 1e-12)
    v = g[sel]
    th = process.thetas[sel]
    trap = np.empty(v.size)
    trap[1:-1] = 0.5 * (v[2:] - v[:-2])
    trap[0] = 0.5 * (v[1] - v[0])
    trap[-1] = 0.5 * (v[-1] - v[-2])
    t = v - u
    w = trap * kernel_eval(kernel, t / h) / h
    den = np.sum(w * t * t)
    if den <= 0:
        raise ValueError("no kernel mass on the grid")
    return (w * t) @ (th - process.thetas[iu]) / den


# --------------------------------------------------------------------------
# augmented quantile regression


@dataclass
class AQRResult:
    theta: np.ndarray
    theta_u: np.ndarray
    objective: float
    init_objective: float
    evaluations: int
    restarted: bool
    info: dict = field(default_factory=dict)


def _aqr_moments_exact(data: Dataset, u, kernel: KernelSpec, theta, beta):
    """Kernel-weighted v-integrals of the QR moment along ``theta + beta (v - u)``.

    Returns the stacked (2p,) vector: the level equation and the slope
    equation, the latter scaled by ``1 / (h k2)``.  Both integrals are exact.
    """
    x, y = data.x, data.y
    h = kernel.h
    k2 = kappa_moment(kernel, 2, -1.0, 1.0)
    a = y - x @ theta
    b = x @ beta
    bh = b * h
    pos, neg = bh > 0, bh < 0
    zero = ~(pos | neg)
    t = np.zeros_like(a)
    t[~zero] = a[~zero] / bh[~zero]
    # level: int 1{a <= b h t} K(t) dt, slope: int 1{a <= b h t} t K(t) dt
    P = np.where(pos, 1.0 - kernel_cdf(kernel, t), np.where(neg, kernel_cdf(kernel, t), 0.0))
    P = np.where(zero, (a <= 0).astype(float), P)
    Q = np.where(pos, kbar(kernel, t), np.where(neg, -kbar(kernel, t), 0.0))
    lev = (P - u) @ x / data.n
    slope = (Q - h * k2) @ x / (data.n * h * k2)
    return np.concatenate([lev, slope])


def _aqr_moments_gl(data: Dataset, u, kernel: KernelSpec, theta, beta, nodes=GL_NODES):
    x, y = data.x, data.y
    h = kernel.h
    k2 = kappa_moment(kernel, 2, -1.0, 1.0)
    s, w = np.polynomial.legendre.leggauss(nodes)
    kw = w * kernel_eval(kernel, s)
    fitted = x @ theta
    slope_x = x @ beta
    lev = np.zeros(data.p)
    slo = np.zeros(data.p)
    for sg, wg in zip(s, kw):
        v = u + h * sg
        m = ((y <= fitted + slope_x * h * sg) - v) @ x / data.n
        lev += wg * m
        slo += wg * sg * m
    return np.concatenate([lev, slo / k2])


def aqr_objective(data, u, kernel, params, integration="exact", nodes=GL_NODES) -> float:
    p = data.p
    theta, beta = params[:p], params[p:]
    if integration == "exact":
        m = _aqr_moments_exact(data, u, kernel, theta, beta)
    else:
        m = _aqr_moments_gl(data, u, kernel, theta, beta, nodes)
    return float(m @ m)


def silverman_bandwidth(r: np.ndarray) -> float:
    r = np.asarray(r, dtype=float)
    iqr = np.subtract(*np.percentile(r, [75, 25]))
    spread = min(np.std(r), iqr / 1.349) if iqr > 0 else np.std(r)
    return float(1.06 * max(spread, 1e-8) * r.size ** (-0.2))


def _simplex(x0, rel=0.1, floor=0.05):
    steps = np.maximum(rel * np.abs(x0), floor)
    return np.vstack([x0, x0 + np.diag(steps)])


def augmented_qr(
    data: Dataset,
    u: float,
    kernel: KernelSpec,
    init_theta=None,
    init_beta=None,
    integration: str = "exact",
    nodes: int = GL_NODES,
    max_evals: int = MAX_EVALS,
) -> AQRResult:
    """Joint level/slope estimate minimising the squared kernel-smoothed QR moments.

    The moment ``mean((1{Y <= X'(theta + beta (v - u))} - v) X)`` is
    integrated against ``K_h(v - u)`` and ``(v - u)/h K_h(v - u)``, and the
    squared norm of the stacked result is minimised by Nelder-Mead with one
    restart from a fresh simplex around the best point.  ``integration`` is
    ``"exact"`` (closed form in the kernel CDF) or ``"gauss-legendre"``.
    """
    h = kernel.h
    if not (0.0 < u - h and u + h < 1.0):
        raise ValueError(f"[u - h, u + h] = [{u - h}, {u + h}] must lie inside (0, 1)")
    if integration not in ("exact", "gauss-legendre"):
        raise ValueError(f"unknown integration {integration!r}")
    p = data.p
    if init_theta is None:
        init_theta = qr_fit(data, u).theta
    init_theta = np.asarray(init_theta, dtype=float)
    if init_beta is None:
        bw = silverman_bandwidth(data.y - data.x @ init_theta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MomDerivWarning)
            init_beta = qr_theta_u(data, u, KernelSpec(kernel.family, bw)).theta_u
    init_beta = np.asarray(init_beta, dtype=float)
    x0 = np.concatenate([init_theta, init_beta])

    def f(z):
        return aqr_objective(data, u, kernel, z, integration, nodes)

    f0 = f(x0)
    budget = max_evals // 2
    opts = dict(maxfev=budget, xatol=1e-10, fatol=1e-16, adaptive=p > 2)
    res = minimize(f, x0, method="Nelder-Mead", options={**opts, "initial_simplex": _simplex(x0)})
    best_x, best_f, nfev = res.x, res.fun, res.nfev
    res2 = minimize(f, best_x, method="Nelder-Mead",
                    options={**opts, "initial_simplex": _simplex(best_x, rel=0.02, floor=0.01)})
    nfev += res2.nfev
    if res2.fun < best_f:
        best_x, best_f = res2.x, res2.fun
    if f0 < best_f:
        best_x, best_f = x0, f0
    if best_f > 1e-3 * f0 and f0 > 0:
        warnings.warn(
            f"augmented QR objective {best_f:.3g} is above 1e-3 of its starting value {f0:.3g}",
            MomDerivWarning,
            stacklevel=2,
        )
    return AQRResult(
        theta=best_x[:p], theta_u=best_x[p:], objective=float(best_f), init_objective=float(f0),
        evaluations=int(nfev), restarted=True,
        info={"integration": integration, "nodes": nodes if integration != "exact" else None,
              "first_pass": float(res.fun)},
    )
