"""Derivative of a moment-identified coefficient function via the implicit function theorem.

For a moment condition ``M(theta(u), u) = 0`` the derivative is

    theta_u(u) = -J(theta(u))^{-1} M_u,   J[k, j] = dM_k / dtheta_j.

Whichever of ``J`` and ``M_u`` is not a plain sample mean is estimated by
local-linear smoothing of the sample moment, which for indicator-type
moments collapses to sums of the pseudo-kernel ``kbar``.

Matrices are stored in Jacobian orientation: row = moment component,
column = parameter component.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .data import Dataset, IndexInterval
from .dr import dr_fit, logistic_pdf
from .kernels import KernelSpec, gamma_const, kappa_moment, kbar, kbar_cross_integral
from .qr import CoefEstimate, qr_fit

COND_LIMIT = 1e12
DENSITY_FLOOR = 1e-8
MIN_WINDOW = 10


class MomDerivWarning(UserWarning):
    pass


class SingularJacobianError(np.linalg.LinAlgError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class EmptyKernelSupportError(ValueError):
    pass


@dataclass(frozen=True)
class MomentJacobian:
    matrix: np.ndarray
    symmetrized: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"Jacobian must be square, got {m.shape}")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class MomentUDeriv:
    vector: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=float).reshape(-1))


@dataclass(frozen=True)
class DerivEstimate:
    """Estimated derivative with the parts it was assembled from.

    ``variance`` (when present) is scaled so that ``variance / (n h)``
    approximates the sampling covariance of ``theta_u``.
    """

    u: float
    theta: np.ndarray
    theta_u: np.ndarray
    m_theta: MomentJacobian
    m_u: MomentUDeriv
    h: float
    model: str
    n: int
    fit: CoefEstimate | None = None
    variance: np.ndarray | None = None
    variance_scale: str = "1/(n h)"
    diagnostics: dict = field(default_factory=dict)

    def with_variance(self, v, **diag) -> "DerivEstimate":
        d = dict(self.diagnostics)
        d.update(diag)
        return DerivEstimate(
            self.u, self.theta, self.theta_u, self.m_theta, self.m_u, self.h, self.model,
            self.n, self.fit, v, self.variance_scale, d,
        )

    @property
    def sampling_covariance(self):
        if self.variance is None:
            return None
        return self.variance / (self.n * self.h)


# --------------------------------------------------------------------------
# quantile regression pieces


def qr_m_u(data: Dataset) -> MomentUDeriv:
    """``-mean(X)``: the u-derivative of ``E[(1{Y <= X'theta} - u) X]``."""
    return MomentUDeriv(-data.x.mean(axis=0))


def qr_m_theta(
    data: Dataset, theta, kernel: KernelSpec, symmetrize: bool = False
) -> MomentJacobian:
    """Local-linear estimate of ``E[f(X'theta | X) X X']`` for the QR moment.

    Entry ``[k, j]`` is ``sum_i X_ji sign(X_ki) kbar_h((Y_i - X_i'theta) / |X_ki|) / (n k2)``:
    row ``k`` rescales the residual by its own regressor.  Observations with
    ``X_ki = 0`` contribute nothing to row ``k``.
    """
    x, y = data.x, data.y
    n, p = x.shape
    h = kernel.h
    k2 = kappa_moment(kernel, 2, -1.0, 1.0)
    resid = y - x @ np.asarray(theta, dtype=float)
    J = np.empty((p, p))
    starved = []
    for k in range(p):
        xk = x[:, k]
        ax = np.abs(xk)
        nz = ax > 0
        w = np.zeros(n)
        s = resid[nz] / (ax[nz] * h)
        w[nz] = np.sign(xk[nz]) * kbar(kernel, s) / h
        J[k, :] = w @ x / (n * k2)
        in_window = int(np.count_nonzero(np.abs(s) <= 1.0))
        if in_window < MIN_WINDOW:
            starved.append((k, in_window))
    if starved:
        warnings.warn(
            f"kernel window starved: (column, observations in window) = {starved}; "
            "consider a larger bandwidth",
            MomDerivWarning,
            stacklevel=2,
        )
    if symmetrize:
        J = 0.5 * (J + J.T)
    return MomentJacobian(J, symmetrized=symmetrize)


# --------------------------------------------------------------------------
# distribution regression pieces


def dr_m_theta(data: Dataset, theta) -> MomentJacobian:
    """``-mean(lambda(X'theta) X X')``; symmetric negative semidefinite."""
    x = data.x
    lam = logistic_pdf(x @ np.asarray(theta, dtype=float))
    J = -(x * lam[:, None]).T @ x / data.n
    J = 0.5 * (J + J.T)
    return MomentJacobian(J, symmetrized=False)


def default_interval(data: Dataset) -> IndexInterval:
    return IndexInterval(float(data.y.min()), float(data.y.max()))


def dr_m_u(
    data: Dataset, u: float, kernel: KernelSpec, interval: IndexInterval | None = None
) -> MomentUDeriv:
    """Local-linear estimate of ``E[f(u | X) X]`` over the index set ``interval``.

    Evaluates the boundary-truncated smoother exactly: with
    ``[lo, hi] = [(u_* - u)/h, (u^* - u)/h]`` clipped to [-1, 1],

        sum_i X_i (int_{max(s_i, lo)}^{hi} t K(t) dt - 1{Y_i <= u} k1) / (n h k2),

    where ``s_i = (Y_i - u)/h`` and ``ks = int_lo^hi t^s K``.
    """
    interval = interval or default_interval(data)
    if not interval.contains(u):
        raise ValueError(f"u={u} outside the index set [{interval.u_lower}, {interval.u_upper}]")
    h = kernel.h
    lo = max((interval.u_lower - u) / h, -1.0)
    hi = min((interval.u_upper - u) / h, 1.0)
    k1 = kappa_moment(kernel, 1, lo, hi)
    k2 = kappa_moment(kernel, 2, lo, hi)
    if k2 <= 0.0:
        raise EmptyKernelSupportError(f"empty effective kernel support at u={u}, h={h}")
    s = (data.y - u) / h
    inner = kappa_moment(kernel, 1, np.maximum(s, lo), hi)
    weight = inner - (data.y <= u) * k1
    return MomentUDeriv(weight @ data.x / (data.n * h * k2))


def dr_m_u_interior(data: Dataset, u: float, kernel: KernelSpec) -> MomentUDeriv:
    """Interior form ``sum_i X_i kbar_h(Y_i - u) / (n k2)``, valid for u at least h from the edges."""
    k2 = kappa_moment(kernel, 2, -1.0, 1.0)
    w = kbar(kernel, (data.y - u) / kernel.h) / kernel.h
    return MomentUDeriv(w @ data.x / (data.n * k2))


# --------------------------------------------------------------------------
# assembly


def assemble_theta_u(m_theta: MomentJacobian, m_u: MomentUDeriv) -> np.ndarray:
    """Solve ``-J x = M_u`` by a pivoted LU factorisation."""
    J = m_theta.matrix
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularJacobianError(
            f"moment Jacobian is singular or ill-conditioned (condition number {cond:.3g})",
            condition=cond,
        )
    lu = sla.lu_factor(-J)
    return sla.lu_solve(lu, m_u.vector)


def qr_theta_u(
    data: Dataset,
    u: float,
    kernel: KernelSpec,
    symmetrize: bool = False,
    fit: CoefEstimate | None = None,
) -> DerivEstimate:
    """Derivative of the quantile regression coefficient function at level ``u``."""
    fit = fit if fit is not None else qr_fit(data, u)
    J = qr_m_theta(data, fit.theta, kernel, symmetrize=symmetrize)
    mu = qr_m_u(data)
    tu = assemble_theta_u(J, mu)
    return DerivEstimate(
        u=float(u), theta=fit.theta, theta_u=tu, m_theta=J, m_u=mu, h=kernel.h,
        model="qr", n=data.n, fit=fit,
        diagnostics={"kernel": kernel.family, "symmetrize": symmetrize,
                     "fit_converged": fit.converged},
    )


def dr_theta_u(
    data: Dataset,
    u: float,
    kernel: KernelSpec,
    interval: IndexInterval | None = None,
    fit: CoefEstimate | None = None,
) -> DerivEstimate:
    """Derivative of the distribution regression coefficient function at threshold ``u``."""
    interval = interval or default_interval(data)
    fit = fit if fit is not None else dr_fit(data, u)
    J = dr_m_theta(data, fit.theta)
    mu = dr_m_u(data, u, kernel, interval)
    tu = assemble_theta_u(J, mu)
    h = kernel.h
    interior = interval.u_lower + h < u < interval.u_upper - h
    return DerivEstimate(
        u=float(u), theta=fit.theta, theta_u=tu, m_theta=J, m_u=mu, h=h,
        model="dr", n=data.n, fit=fit,
        diagnostics={"kernel": kernel.family, "interior": bool(interior),
                     "interval": [interval.u_lower, interval.u_upper],
                     "fit_converged": fit.converged},
    )


# --------------------------------------------------------------------------
# variance estimators


def _psd_repair(C, what):
    C = 0.5 * (C + C.T)
    vals, vecs = np.linalg.eigh(C)
    neg = -vals[vals < 0].sum()
    trace = np.abs(vals).sum()
    frac = float(neg / trace) if trace > 0 else 0.0
    if frac > 0.10:
        warnings.warn(
            f"{what}: PSD repair removed {frac:.1%} of the trace", MomDerivWarning, stacklevel=3
        )
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals) @ vecs.T, vecs * np.sqrt(vals), frac


def _floored_density(dens, what):
    dens = np.asarray(dens, dtype=float)
    low = dens < DENSITY_FLOOR
    nfloor = int(np.count_nonzero(low))
    if nfloor:
        warnings.warn(
            f"{what}: {nfloor} observations with nonpositive fitted density floored at "
            f"{DENSITY_FLOOR}",
            MomDerivWarning,
            stacklevel=3,
        )
    return np.where(low, DENSITY_FLOOR, dens), nfloor


def qr_jacobian_covariance(data: Dataset, density_quantile, kernel: KernelSpec) -> np.ndarray:
    """Plug-in covariance of the limit of ``sqrt(nh) (J_hat - J)``, as a (p*p, p*p) matrix.

    Index ``k * p + j`` refers to Jacobian entry ``[k, j]``.  The entry for
    ``[k, j]`` and ``[m, l]`` averages
    ``X_j X_l sign(X_k X_m) |X_k| int kbar(s) kbar(s |X_k| / |X_m|) ds * d_i / k2^2``.
    """
    x = data.x
    n, p = x.shape
    k2 = kappa_moment(kernel, 2, -1.0, 1.0)
    d = np.asarray(density_quantile, dtype=float)
    ax = np.abs(x)
    # cross[k][m]: per-observation sign(X_k X_m) |X_k| f(|X_k|/|X_m|) d_i
    cross = np.zeros((p, p, n))
    for k in range(p):
        for m in range(p):
            nz = (ax[:, k] > 0) & (ax[:, m] > 0)
            r = ax[nz, k] / ax[nz, m]
            cross[k, m, nz] = (
                np.sign(x[nz, k] * x[nz, m]) * ax[nz, k] * kbar_cross_integral(kernel, r) * d[nz]
            )
    C = np.einsum("ij,il,kmi->kjml", x, x, cross) / (n * k2**2)
    return C.reshape(p * p, p * p)


def qr_variance(
    data: Dataset, est: DerivEstimate, S: int = 1000, seed: int = 0, kernel: KernelSpec | None = None
) -> DerivEstimate:
    """Simulation estimate of the asymptotic variance of the QR derivative estimator.

    Draws ``S`` Gaussian matrices with the plug-in covariance of the
    Jacobian error and averages ``T T'`` with ``T = J^{-1} A J^{-1} M_u``.
    """
    if est.model != "qr":
        raise ValueError("qr_variance needs a quantile regression estimate")
    if S < 100:
        raise ValueError("use at least S = 100 simulation draws")
    kernel = kernel or KernelSpec(est.diagnostics.get("kernel", "triangular"), est.h)
    p = data.p
    d_raw = 1.0 / (data.x @ est.theta_u)
    d, nfloor = _floored_density(np.where(np.isfinite(d_raw), d_raw, -1.0), "qr_variance")
    C = qr_jacobian_covariance(data, d, kernel)
    _, root, frac = _psd_repair(C, "qr_variance")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((S, p * p))
    A = (Z @ root.T).reshape(S, p, p)
    Jinv = np.linalg.inv(est.m_theta.matrix)
    base = Jinv @ est.m_u.vector
    T = np.einsum("ab,sbc,c->sa", Jinv, A, base)
    V = T.T @ T / S
    V = 0.5 * (V + V.T)
    return est.with_variance(V, variance_draws=S, variance_seed=seed, floored=nfloor,
                             psd_repair_fraction=frac)


def qr_variance_exact(data: Dataset, est: DerivEstimate, kernel: KernelSpec | None = None):
    """Closed-form counterpart of :func:`qr_variance` (its S -> infinity limit)."""
    kernel = kernel or KernelSpec(est.diagnostics.get("kernel", "triangular"), est.h)
    p = data.p
    d, _ = _floored_density(1.0 / (data.x @ est.theta_u), "qr_variance_exact")
    C, _, _ = _psd_repair(qr_jacobian_covariance(data, d, kernel), "qr_variance_exact")
    Jinv = np.linalg.inv(est.m_theta.matrix)
    base = Jinv @ est.m_u.vector
    # T_a = sum_{b,c} Jinv[a,b] A[b,c] base[c]  ->  linear map on vec(A)
    L = np.einsum("ab,c->abc", Jinv, base).reshape(p, p * p)
    return L @ C @ L.T


def dr_variance(data: Dataset, est: DerivEstimate, kernel: KernelSpec | None = None) -> DerivEstimate:
    """Plug-in sandwich ``Gamma(1) J^{-1} mean(f_i X X') J^{-1}`` for the DR derivative.

    ``f_i = lambda(X_i'theta) X_i'theta_u`` is the model-implied conditional
    density at the threshold; nonpositive values are floored.
    """
    if est.model != "dr":
        raise ValueError("dr_variance needs a distribution regression estimate")
    if not est.diagnostics.get("interior", True):
        warnings.warn("dr_variance is derived for interior thresholds", MomDerivWarning, stacklevel=2)
    kernel = kernel or KernelSpec(est.diagnostics.get("kernel", "triangular"), est.h)
    x = data.x
    f = logistic_pdf(x @ est.theta) * (x @ est.theta_u)
    f, nfloor = _floored_density(f, "dr_variance")
    middle = (x * f[:, None]).T @ x / data.n
    Jinv = np.linalg.inv(est.m_theta.matrix)
    V = gamma_const(kernel, 1.0) * Jinv @ middle @ Jinv.T
    V, _, frac = _psd_repair(V, "dr_variance")
    return est.with_variance(V, floored=nfloor, psd_repair_fraction=frac)
