"""Conditional CDF, density, density-quantile, auction and partial-effect estimators."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .data import Dataset, IndexInterval
from .derivative import default_interval, dr_theta_u, qr_theta_u
from .dr import dr_process, logistic_pdf
from .kernels import KernelSpec
from .qr import CoefProcess, qr_process

DEFAULT_EPSILON = 0.01
DEFAULT_GRID_STEP = 0.005


class NonPositiveDensityError(ArithmeticError):
    """The fitted quantile derivative ``x'theta_u`` is not positive."""

    def __init__(self, message, denominator=None):
        super().__init__(message)
        self.denominator = denominator


@dataclass(frozen=True)
class EvalPoint:
    """Covariate profile ``x`` (intercept included) plus the evaluation argument."""

    x: tuple
    y: float | None = None
    u: float | None = None
    tau: float | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if x.size == 0 or not np.all(np.isfinite(x)):
            raise ValueError("x must be a finite nonempty vector")
        object.__setattr__(self, "x", tuple(float(v) for v in x))
        if self.tau is not None and not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")

    @property
    def xv(self) -> np.ndarray:
        return np.array(self.x)

    def need(self, name: str) -> float:
        v = getattr(self, name)
        if v is None:
            raise ValueError(f"evaluation point needs {name!r}")
        return float(v)


@dataclass(frozen=True)
class AuctionSpec:
    bidders: int

    def __post_init__(self):
        if int(self.bidders) != self.bidders or self.bidders < 3:
            raise ValueError(f"need at least 3 bidders, got {self.bidders}")


def _check_dim(data: Dataset, point: EvalPoint):
    if len(point.x) != data.p:
        raise ValueError(f"x has {len(point.x)} entries, the design has {data.p} columns")


def trimmed_grid(epsilon: float = DEFAULT_EPSILON, step: float = DEFAULT_GRID_STEP) -> np.ndarray:
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    if step <= 0:
        raise ValueError("grid step must be positive")
    m = int(np.floor((1.0 - 2.0 * epsilon) / step + 1e-9))
    g = epsilon + step * np.arange(m + 1)
    if g[-1] < 1.0 - epsilon - 1e-12:
        g = np.append(g, 1.0 - epsilon)
    return g


# --------------------------------------------------------------------------
# quantile regression based


def qr_cdf(process: CoefProcess, point: EvalPoint, epsilon: float = DEFAULT_EPSILON) -> float:
    """``epsilon + int_eps^{1-eps} 1{x'theta(u) <= y} du`` as a Riemann sum on the grid.

    Each grid level owns the cell between the midpoints to its neighbours,
    clipped to ``[eps, 1 - eps]``.
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    y = point.need("y")
    g = process.grid
    lo, hi = epsilon, 1.0 - epsilon
    step = np.max(np.diff(g)) if g.size > 1 else 1.0
    if g[0] > lo + 0.5 * step + 1e-12 or g[-1] < hi - 0.5 * step - 1e-12 or g.size < 2:
        raise ValueError(f"process grid [{g[0]}, {g[-1]}] does not cover [{lo}, {hi}]")
    keep = (g >= lo - 0.5 * step) & (g <= hi + 0.5 * step)
    gk = g[keep]
    edges = np.concatenate([[lo], 0.5 * (gk[1:] + gk[:-1]), [hi]])
    widths = np.clip(np.diff(np.clip(edges, lo, hi)), 0.0, None)
    fitted = process.thetas[keep] @ point.xv
    return float(epsilon + np.sum(widths * (fitted <= y)))


def qr_density(
    data: Dataset,
    point: EvalPoint,
    kernel: KernelSpec,
    epsilon: float = DEFAULT_EPSILON,
    grid_step: float = DEFAULT_GRID_STEP,
    process: CoefProcess | None = None,
) -> float:
    """``1 / x'theta_u(F_hat(y | x))`` with ``F_hat`` from :func:`qr_cdf`."""
    _check_dim(data, point)
    process = process if process is not None else qr_process(data, trimmed_grid(epsilon, grid_step))
    level = qr_cdf(process, point, epsilon)
    level = min(max(level, epsilon), 1.0 - epsilon)
    est = qr_theta_u(data, level, kernel)
    denom = float(point.xv @ est.theta_u)
    if not denom > 0.0:
        raise NonPositiveDensityError(
            f"x'theta_u = {denom:.6g} at u = {level:.4f} is not positive (flat quantile region)",
            denominator=denom,
        )
    return 1.0 / denom


def density_quantile(data: Dataset, point: EvalPoint, kernel: KernelSpec) -> float:
    """``1 / x'theta_u(u)``: the conditional density at the conditional ``u``-quantile."""
    _check_dim(data, point)
    u = point.need("u")
    denom = float(point.xv @ qr_theta_u(data, u, kernel).theta_u)
    if not denom > 0.0:
        raise NonPositiveDensityError(f"x'theta_u = {denom:.6g} is not positive", denominator=denom)
    return 1.0 / denom


def powell_variance(data: Dataset, u: float, kernel: KernelSpec, min_positive: float = 0.95):
    """Sandwich ``u(1-u) D^-1 E[XX'] D^-1`` with ``D = mean(d_i X_i X_i')`` and ``d_i = 1/X_i'theta_u``.

    Observations with a nonpositive fitted density get weight zero; more
    than ``1 - min_positive`` of them is an error.
    """
    est = qr_theta_u(data, u, kernel)
    x = data.x
    denom = x @ est.theta_u
    pos = denom > 0
    npos = int(pos.sum())
    if npos < min_positive * data.n:
        raise NonPositiveDensityError(
            f"fitted density nonpositive for {data.n - npos} of {data.n} observations"
        )
    d = np.where(pos, 1.0 / np.where(pos, denom, 1.0), 0.0)
    D = (x * d[:, None]).T @ x / data.n
    S = x.T @ x / data.n
    Dinv = np.linalg.inv(D)
    V = u * (1.0 - u) * Dinv @ S @ Dinv.T
    return 0.5 * (V + V.T)


def auction_quantile(data: Dataset, point: EvalPoint, spec: AuctionSpec, kernel: KernelSpec) -> float:
    """Private-value quantile ``x'theta(u) + u x'theta_u(u) / (b - 1)`` from bid quantiles."""
    _check_dim(data, point)
    u = point.need("u")
    est = qr_theta_u(data, u, kernel)
    xv = point.xv
    return float(xv @ est.theta + u * (xv @ est.theta_u) / (spec.bidders - 1))


# --------------------------------------------------------------------------
# distribution regression based


class DRDensity(NamedTuple):
    value: float
    negative: bool


class DRQuantile(NamedTuple):
    value: float
    index: int
    monotone: bool


def dr_density(
    data: Dataset, point: EvalPoint, kernel: KernelSpec, interval: IndexInterval | None = None
) -> DRDensity:
    """``lambda(x'theta(u)) x'theta_u(u)``; negative values are flagged, not clipped."""
    _check_dim(data, point)
    u = point.need("u")
    est = dr_theta_u(data, u, kernel, interval)
    xv = point.xv
    val = float(logistic_pdf(xv @ est.theta) * (xv @ est.theta_u))
    return DRDensity(val, val < 0.0)


def dr_quantile(process: CoefProcess, point: EvalPoint) -> DRQuantile:
    """Smallest grid threshold with ``Lambda(x'theta(u)) >= tau``."""
    tau = point.need("tau")
    levels = expit(process.thetas @ point.xv)
    hit = np.flatnonzero(levels >= tau)
    if hit.size == 0:
        raise ValueError(
            f"fitted CDF never reaches tau={tau} on the grid (max {levels.max():.4f})"
        )
    g = int(hit[0])
    monotone = bool(np.all(np.diff(levels) >= 0))
    return DRQuantile(float(process.grid[g]), g, monotone)


def default_dr_grid(data: Dataset, lo: float = 0.01, hi: float = 0.99, step: float = DEFAULT_GRID_STEP):
    """Thresholds at empirical quantiles of ``y`` on an evenly spaced level grid."""
    q = np.quantile(data.y, np.arange(lo, hi + 0.5 * step, step))
    return np.unique(q)


def qpe(
    data: Dataset,
    point: EvalPoint,
    kernel: KernelSpec,
    interval: IndexInterval | None = None,
    process: CoefProcess | None = None,
) -> np.ndarray:
    """Quantile partial effect ``-theta(Q) / x'theta_u(Q)`` at ``Q = Q_hat(tau | x)``.

    The first component belongs to the intercept and is not a partial effect.
    """
    _check_dim(data, point)
    interval = interval or default_interval(data)
    process = process if process is not None else dr_process(data, default_dr_grid(data))
    q = dr_quantile(process, point)
    est = dr_theta_u(data, q.value, kernel, interval)
    denom = float(point.xv @ est.theta_u)
    if denom == 0.0:
        raise ArithmeticError(f"x'theta_u = 0 at the fitted quantile {q.value}")
    return -est.theta / denom
