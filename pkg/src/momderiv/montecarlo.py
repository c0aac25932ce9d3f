"""Simulation design, analytic truth, population oracle and the study runner.

The design is ``Y = a(X) + s(X) U`` with ``X ~ chi2(1)``, ``U`` standard
logistic, ``a(x) = a0 + a1 x`` and ``s(x) = s0 + s1 x``.  The default
``a = x, s = 1 + x`` is the heteroskedastic design of the simulation tables;
``s1 = 0`` gives a location-shift design under which distribution regression
is correctly specified as well.
"""
from __future__ import annotations

import csv
import io
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import quad_vec
from scipy.optimize import root
from scipy.special import expit, logit

from .data import Dataset, IndexInterval
from .kernels import KernelSpec, gamma_const, kappa_moment, kbar_cross_integral


def _lam(z):
    e = expit(z)
    return e * (1.0 - e)


def _lam1(z):
    e = expit(z)
    return e * (1.0 - e) * (1.0 - 2.0 * e)


def _lam2(z):
    e = expit(z)
    lam = e * (1.0 - e)
    return lam * (1.0 - 2.0 * e) ** 2 - 2.0 * lam**2


@dataclass(frozen=True)
class LinearLogisticDGP:
    """``Y = a0 + a1 X + (s0 + s1 X) U`` with ``X ~ chi2(1)`` and standard logistic ``U``."""

    a0: float = 0.0
    a1: float = 1.0
    s0: float = 1.0
    s1: float = 1.0

    # --- sampling -------------------------------------------------------
    def sample(self, n: int, seed) -> Dataset:
        """Draw ``n`` observations; the stream depends on ``seed`` only.

        ``X`` is the square of a standard normal draw and ``U`` the logistic
        inverse CDF of a uniform draw, so each replication consumes a fixed
        number of variates.
        """
        if n < 1:
            raise ValueError("n must be positive")
        rng = np.random.default_rng(seed)
        z = rng.standard_normal(n)
        v = rng.random(n)
        xv = z * z
        u = logit(v)
        y = self.a0 + self.a1 * xv + (self.s0 + self.s1 * xv) * u
        return Dataset.unchecked(y, np.column_stack([np.ones(n), xv]), ("(Intercept)", "x"))

    # --- conditional distribution --------------------------------------
    def loc(self, x):
        return self.a0 + self.a1 * x

    def scale(self, x):
        return self.s0 + self.s1 * x

    def cdf(self, y, x):
        return expit((y - self.loc(x)) / self.scale(x))

    def pdf(self, y, x):
        s = self.scale(x)
        return _lam((y - self.loc(x)) / s) / s

    def pdf_y(self, y, x):
        s = self.scale(x)
        return _lam1((y - self.loc(x)) / s) / s**2

    def pdf_yy(self, y, x):
        s = self.scale(x)
        return _lam2((y - self.loc(x)) / s) / s**3

    def quantile(self, u, x):
        return self.loc(x) + self.scale(x) * logit(u)

    # --- analytic truth -------------------------------------------------
    def true_theta(self, u) -> np.ndarray:
        """Quantile regression coefficients ``(a0 + s0 q, a1 + s1 q)``, ``q = logit(u)``."""
        q = logit(u)
        return np.array([self.a0 + self.s0 * q, self.a1 + self.s1 * q])

    def true_theta_u(self, u, printed: bool = False) -> np.ndarray:
        """Derivative ``(s0, s1) / (u (1 - u))`` of :meth:`true_theta`.

        ``printed=True`` returns the alternative ``(s0, s1) / Lambda(lambda(u))``
        kept only for comparison runs.
        """
        if printed:
            return np.array([self.s0, self.s1]) / expit(_lam(u))
        return np.array([self.s0, self.s1]) / (u * (1.0 - u))

    def dr_true_theta(self, u) -> np.ndarray:
        """Logit coefficients of ``1{Y <= u}`` when the design is a location shift."""
        if self.s1 != 0.0:
            raise ValueError("distribution regression is misspecified unless s1 == 0")
        return np.array([(u - self.a0) / self.s0, -self.a1 / self.s0])

    def dr_true_theta_u(self, u) -> np.ndarray:
        if self.s1 != 0.0:
            raise ValueError("distribution regression is misspecified unless s1 == 0")
        return np.array([1.0 / self.s0, 0.0])


TABLE_DGP = LinearLogisticDGP()


def dgp_sample(n: int, seed, dgp: LinearLogisticDGP = TABLE_DGP) -> Dataset:
    return dgp.sample(n, seed)


def true_theta(u, dgp: LinearLogisticDGP = TABLE_DGP) -> np.ndarray:
    return dgp.true_theta(u)


def true_theta_u(u, dgp: LinearLogisticDGP = TABLE_DGP, printed: bool = False) -> np.ndarray:
    return dgp.true_theta_u(u, printed=printed)


# --------------------------------------------------------------------------
# population oracle


def chi2_expect(g, epsabs=1e-11, epsrel=1e-10):
    """``E[g(X)]`` for ``X ~ chi2(1)``, via ``X = Z^2`` with half-normal ``Z``.

    ``g`` maps a scalar to an array; the integral is computed by adaptive
    quadrature over ``z`` in [0, inf).
    """
    c = np.sqrt(2.0 / np.pi)

    def integrand(z):
        return np.asarray(g(z * z), dtype=float) * c * np.exp(-0.5 * z * z)

    val, err = quad_vec(integrand, 0.0, np.inf, epsabs=epsabs, epsrel=epsrel, limit=400)
    if not np.all(np.isfinite(val)):
        raise ArithmeticError("quadrature did not converge")
    return val


def _xv(x):
    return np.array([1.0, x])


class PopulationOracle:
    """Population moment objects of the simulation design, by quadrature over X.

    All matrices use Jacobian orientation (row = moment, column = parameter).
    """

    def __init__(self, dgp: LinearLogisticDGP = TABLE_DGP, kernel: str = "triangular"):
        self.dgp = dgp
        self.kernel = kernel
        self.k2 = kappa_moment(kernel, 2, -1.0, 1.0)
        self.k4 = kappa_moment(kernel, 4, -1.0, 1.0)

    # quantile regression ------------------------------------------------
    def qr_M(self, theta, u):
        th = np.asarray(theta, dtype=float)
        return chi2_expect(lambda x: (self.dgp.cdf(_xv(x) @ th, x) - u) * _xv(x))

    def qr_M_theta(self, theta):
        th = np.asarray(theta, dtype=float)
        return chi2_expect(lambda x: self.dgp.pdf(_xv(x) @ th, x) * np.outer(_xv(x), _xv(x)))

    def qr_M_u(self):
        return chi2_expect(lambda x: -_xv(x))

    def qr_jacobian_bias(self, theta):
        """Leading ``h^2`` coefficient of ``E[J_hat] - J``: ``k4/(6 k2) E[f'' X_k^3 X_j]``."""
        th = np.asarray(theta, dtype=float)

        def g(x):
            xv = _xv(x)
            return self.dgp.pdf_yy(xv @ th, x) * np.outer(xv**3, xv)

        return self.k4 / (6.0 * self.k2) * chi2_expect(g)

    def qr_expected_jacobian(self, theta, h):
        """Exact ``E[J_hat(theta)]`` at bandwidth ``h`` (no small-h expansion)."""
        th = np.asarray(theta, dtype=float)
        s, w = np.polynomial.legendre.leggauss(64)
        from .kernels import kbar

        kb = kbar(self.kernel, s)

        def g(x):
            xv = _xv(x)
            out = np.empty((2, 2))
            for k in range(2):
                # E[X_j sign(X_k) h^-1 kbar(e / (|X_k| h))] = X_j X_k int kbar(s) f(X'th + |X_k| h s) ds
                ax = abs(xv[k])
                if ax == 0:
                    out[k, :] = 0.0
                    continue
                inner = np.sum(w * kb * self.dgp.pdf(xv @ th + ax * h * s, x))
                out[k, :] = xv * np.sign(xv[k]) * ax * inner
            return out / self.k2

        return chi2_expect(g)

    def qr_jacobian_covariance(self, theta):
        th = np.asarray(theta, dtype=float)

        def g(x):
            xv = _xv(x)
            ax = np.abs(xv)
            cross = np.empty((2, 2))
            for k in range(2):
                for m in range(2):
                    if ax[k] == 0 or ax[m] == 0:
                        cross[k, m] = 0.0
                    else:
                        cross[k, m] = (np.sign(xv[k] * xv[m]) * ax[k]
                                       * kbar_cross_integral(self.kernel, ax[k] / ax[m]))
            f = self.dgp.pdf(xv @ th, x)
            return np.einsum("j,l,km->kjml", xv, xv, cross) * f

        return chi2_expect(g).reshape(4, 4) / self.k2**2

    def qr_theta_u(self, u):
        th = self.dgp.true_theta(u)
        return -np.linalg.solve(self.qr_M_theta(th), self.qr_M_u())

    def qr_bias(self, u):
        """``h^2`` coefficient of the bias of the QR derivative estimator."""
        th = self.dgp.true_theta(u)
        J = self.qr_M_theta(th)
        Jinv = np.linalg.inv(J)
        return Jinv @ self.qr_jacobian_bias(th) @ Jinv @ self.qr_M_u()

    def qr_V(self, u):
        """Asymptotic variance of ``sqrt(n h)`` times the QR derivative error."""
        th = self.dgp.true_theta(u)
        Jinv = np.linalg.inv(self.qr_M_theta(th))
        base = Jinv @ self.qr_M_u()
        L = np.einsum("ab,c->abc", Jinv, base).reshape(2, 4)
        return L @ self.qr_jacobian_covariance(th) @ L.T

    # distribution regression -------------------------------------------
    def dr_M(self, theta, u):
        th = np.asarray(theta, dtype=float)
        return chi2_expect(lambda x: (self.dgp.cdf(u, x) - expit(_xv(x) @ th)) * _xv(x))

    def dr_M_theta(self, theta):
        th = np.asarray(theta, dtype=float)
        return chi2_expect(lambda x: -_lam(_xv(x) @ th) * np.outer(_xv(x), _xv(x)))

    def dr_M_u(self, u):
        return chi2_expect(lambda x: self.dgp.pdf(u, x) * _xv(x))

    def dr_M_uu(self, u):
        return chi2_expect(lambda x: self.dgp.pdf_y(u, x) * _xv(x))

    def dr_M_uuu(self, u):
        return chi2_expect(lambda x: self.dgp.pdf_yy(u, x) * _xv(x))

    def dr_theta(self, u):
        """(Pseudo-)true logit coefficients solving ``E[(F(u|X) - Lambda(X'theta)) X] = 0``."""
        F = chi2_expect(lambda x: self.dgp.cdf(u, x))
        start = np.array([logit(np.clip(F, 1e-6, 1 - 1e-6)), 0.0])
        sol = root(lambda th: self.dr_M(th, u), start, jac=self.dr_M_theta, tol=1e-13)
        if not sol.success:
            raise ArithmeticError(f"pseudo-true DR coefficients not found at u={u}")
        return sol.x

    def dr_theta_u(self, u):
        return -np.linalg.solve(self.dr_M_theta(self.dr_theta(u)), self.dr_M_u(u))

    def dr_bias_interior(self, u):
        """``h^2`` coefficient of the bias of ``M_u_hat`` in the interior."""
        return self.k4 / (6.0 * self.k2) * self.dr_M_uuu(u)

    def dr_bias_boundary(self, c, u):
        """``h`` coefficient of the bias of ``M_u_hat`` at ``u = u_* + c h``."""
        k2c = kappa_moment(self.kernel, 2, -c, 1.0)
        k3c = kappa_moment(self.kernel, 3, -c, 1.0)
        return 0.5 * k3c / k2c * self.dr_M_uu(u)

    def dr_V(self, u, c: float = 1.0):
        Jinv = np.linalg.inv(self.dr_M_theta(self.dr_theta(u)))
        mid = chi2_expect(lambda x: self.dgp.pdf(u, x) * np.outer(_xv(x), _xv(x)))
        return gamma_const(self.kernel, c) * Jinv @ mid @ Jinv

    # dispatcher -----------------------------------------------------------
    def __call__(self, theta, u, what: str, model: str = "qr"):
        what = what.upper() if what in ("m", "v") else what
        table = {
            ("qr", "M"): lambda: self.qr_M(theta, u),
            ("qr", "M_theta"): lambda: self.qr_M_theta(theta),
            ("qr", "M_u"): lambda: self.qr_M_u(),
            ("qr", "B_int"): lambda: self.qr_jacobian_bias(theta),
            ("qr", "V"): lambda: self.qr_V(u),
            ("dr", "M"): lambda: self.dr_M(theta, u),
            ("dr", "M_theta"): lambda: self.dr_M_theta(theta),
            ("dr", "M_u"): lambda: self.dr_M_u(u),
            ("dr", "B_int"): lambda: self.dr_bias_interior(u),
            ("dr", "V"): lambda: self.dr_V(u),
        }
        try:
            return table[(model, what)]()
        except KeyError:
            raise ValueError(f"unknown oracle request {what!r} for model {model!r}") from None


def population_oracle(theta, u, what, model="qr", dgp=TABLE_DGP, kernel="triangular"):
    return PopulationOracle(dgp, kernel)(theta, u, what, model)


# --------------------------------------------------------------------------
# study runner

TABLE_DESIGNS = {
    1: dict(method="moment", n_values=(1000, 4000),
            h_values=(0.5, 0.7, 0.9, 1.1, 1.3, 1.5, 1.7, 2.0, 3.0)),
    2: dict(method="smoothed", n_values=(1000, 4000),
            h_values=(0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.50)),
    3: dict(method="aqr", n_values=(1000, 4000),
            h_values=(0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.50)),
}

SMOOTHED_GRID_STEP = 0.002


@dataclass(frozen=True)
class StudyConfig:
    model: str = "qr"
    method: str = "moment"
    u: float = 0.5
    n_values: tuple = (1000,)
    h_values: tuple = (0.9,)
    replications: int = 100
    seed: int = 0
    kernel: str = "triangular"
    symmetrize: bool = False
    grid_step: float = SMOOTHED_GRID_STEP
    dgp: LinearLogisticDGP = TABLE_DGP
    interval: tuple | None = None
    printed_truth: bool = False

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if any(h <= 0 for h in self.h_values):
            raise ValueError("bandwidths must be positive")
        if self.model not in ("qr", "dr"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.method not in ("moment", "smoothed", "aqr"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.model == "dr" and self.method != "moment":
            raise ValueError("competitor estimators exist for quantile regression only")

    @classmethod
    def for_table(cls, table: int, **overrides) -> "StudyConfig":
        design = dict(TABLE_DESIGNS[table])
        design.update({k: v for k, v in overrides.items() if v is not None})
        design["n_values"] = tuple(design["n_values"])
        design["h_values"] = tuple(design["h_values"])
        return cls(**design)

    def truth(self) -> np.ndarray:
        if self.model == "qr":
            return self.dgp.true_theta_u(self.u, printed=self.printed_truth)
        if self.dgp.s1 == 0.0:
            return self.dgp.dr_true_theta_u(self.u)
        return PopulationOracle(self.dgp, self.kernel).dr_theta_u(self.u)


@dataclass(frozen=True)
class StudyRow:
    u: float
    n: int
    h: float
    bias: np.ndarray
    variance: np.ndarray
    mse: np.ndarray
    failures: int


@dataclass
class StudyResult:
    config: StudyConfig
    rows: list = field(default_factory=list)
    estimates: dict = field(default_factory=dict)  # n -> (R, H, p) array, NaN for failures

    def row(self, n, h) -> StudyRow:
        for r in self.rows:
            if r.n == n and np.isclose(r.h, h):
                return r
        raise KeyError((n, h))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u", "n", "h", "bias_0", "bias_1", "variance_0", "variance_1",
                    "mse_0", "mse_1", "failures"])
        for r in self.rows:
            w.writerow([f"{r.u:g}", r.n, f"{r.h:g}"]
                       + [f"{v:.6f}" for v in (*r.bias, *r.variance, *r.mse)]
                       + [r.failures])
        return buf.getvalue()


def replication_seed(seed: int, n: int, rep: int):
    """Independent stream per (seed, sample size, replication)."""
    return np.random.SeedSequence([int(seed), int(n), int(rep)])


def _one_replication(config: StudyConfig, n: int, rep: int) -> np.ndarray:
    """Estimates for every bandwidth, shape (H, p); NaN rows mark failures."""
    from . import competitors, derivative, dr, qr

    data = config.dgp.sample(n, replication_seed(config.seed, n, rep))
    H = len(config.h_values)
    out = np.full((H, data.p), np.nan)
    u = config.u
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            if config.method == "moment" and config.model == "qr":
                fit = qr.qr_fit(data, u)
                if not fit.converged:
                    return out
                for i, h in enumerate(config.h_values):
                    try:
                        est = derivative.qr_theta_u(data, u, KernelSpec(config.kernel, h),
                                                    symmetrize=config.symmetrize, fit=fit)
                        out[i] = est.theta_u
                    except (np.linalg.LinAlgError, ValueError, ArithmeticError):
                        pass
            elif config.method == "moment":
                interval = IndexInterval(*config.interval) if config.interval else None
                fit = dr.dr_fit(data, u)
                for i, h in enumerate(config.h_values):
                    try:
                        est = derivative.dr_theta_u(data, u, KernelSpec(config.kernel, h),
                                                    interval=interval, fit=fit)
                        out[i] = est.theta_u
                    except (np.linalg.LinAlgError, ValueError, ArithmeticError):
                        pass
            elif config.method == "smoothed":
                hmax = max(config.h_values)
                grid = competitors.smoothing_grid(u, hmax, config.grid_step)
                proc = qr.qr_process(data, grid)
                for i, h in enumerate(config.h_values):
                    try:
                        out[i] = competitors.smoothed_process_deriv(
                            proc, u, KernelSpec(config.kernel, h))
                    except ValueError:
                        pass
            else:
                fit = qr.qr_fit(data, u)
                for i, h in enumerate(config.h_values):
                    try:
                        res = competitors.augmented_qr(data, u, KernelSpec(config.kernel, h),
                                                       init_theta=fit.theta)
                        out[i] = res.theta_u
                    except (np.linalg.LinAlgError, ValueError, ArithmeticError):
                        pass
        except (np.linalg.LinAlgError, ValueError, ArithmeticError, RuntimeError):
            pass
    return out


def _run_block(args):
    config, n, reps = args
    return [_one_replication(config, n, r) for r in reps]


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get("MOMDERIV_THREADS", "1") or 1)
    return max(1, int(threads))


def summarize(estimates: np.ndarray, truth: np.ndarray):
    """Bias, variance (divide by R) and MSE per component over successful replications."""
    ok = np.all(np.isfinite(estimates), axis=-1)
    good = estimates[ok]
    if good.shape[0] == 0:
        nan = np.full(estimates.shape[-1], np.nan)
        return nan, nan, nan, int((~ok).sum())
    mean = good.mean(axis=0)
    bias = mean - truth
    var = np.mean((good - mean) ** 2, axis=0)
    mse = np.mean((good - truth) ** 2, axis=0)
    return bias, var, mse, int((~ok).sum())


def run_study(config: StudyConfig, threads: int | None = None) -> StudyResult:
    """Monte Carlo bias/variance/MSE of the configured estimator of ``theta_u(u)``.

    Replication ``r`` at sample size ``n`` always uses the stream
    ``(seed, n, r)``, and results are reduced in replication order, so the
    output does not depend on ``threads``.  Failed replications are excluded
    and counted.
    """
    threads = resolve_threads(threads)
    truth = config.truth()
    result = StudyResult(config)
    R = config.replications
    for n in config.n_values:
        if threads == 1:
            reps = [_one_replication(config, n, r) for r in range(R)]
        else:
            chunks = [list(range(R))[i::threads] for i in range(threads)]
            with ProcessPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(_run_block, [(config, n, c) for c in chunks]))
            reps = [None] * R
            for c, part in zip(chunks, parts):
                for r, est in zip(c, part):
                    reps[r] = est
        est = np.stack(reps)  # (R, H, p)
        result.estimates[n] = est
        for i, h in enumerate(config.h_values):
            bias, var, mse, fails = summarize(est[:, i, :], truth)
            result.rows.append(StudyRow(config.u, n, h, bias, var, mse, fails))
    return result
