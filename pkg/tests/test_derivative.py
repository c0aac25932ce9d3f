import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import expit

from momderiv.data import Dataset, IndexInterval
from momderiv.derivative import (MomDerivWarning, MomentJacobian,
                                 MomentUDeriv, SingularJacobianError, assemble_theta_u,
                                 dr_m_theta, dr_m_u, dr_m_u_interior, dr_theta_u, dr_variance,
                                 qr_jacobian_covariance, qr_m_theta, qr_m_u, qr_theta_u,
                                 qr_variance, qr_variance_exact)
from momderiv.kernels import KernelSpec, gamma_const, kbar, kbar_sq_integral, kernel_eval
from momderiv.montecarlo import LinearLogisticDGP, PopulationOracle, dgp_sample, true_theta

TRI = "triangular"


def _ones(y):
    y = np.asarray(y, dtype=float)
    return Dataset.unchecked(y, np.ones((y.size, 1)))


# --- QR pieces -------------------------------------------------------------

def test_qr_m_u():
    assert qr_m_u(_ones([1.0, 5.0])).vector.tolist() == [-1.0]
    d = Dataset([0.0, 1.0], np.array([[1.0, 0.0], [1.0, 2.0]]))
    np.testing.assert_allclose(qr_m_u(d).vector, [-1.0, -1.0])


def test_qr_m_theta_single_observation():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MomDerivWarning)
        J = qr_m_theta(_ones([0.0]), [0.0], KernelSpec(TRI, 1.0))
    assert J.matrix[0, 0] == pytest.approx(1.0)


def test_qr_m_theta_outside_window_is_zero(rng):
    x = np.column_stack([np.ones(20), rng.uniform(0.5, 1.0, 20)])
    y = 10.0 + rng.uniform(0, 1, 20)
    with pytest.warns(MomDerivWarning, match="starved"):
        J = qr_m_theta(Dataset(y, x), [0.0, 0.0], KernelSpec(TRI, 1.0))
    assert np.all(J.matrix == 0.0)


@given(seed=st.integers(0, 1000))
def test_qr_m_theta_matches_direct_sum(seed):
    rng = np.random.default_rng(seed)
    n = 30
    x = np.column_stack([np.ones(n), rng.normal(size=n), rng.uniform(-2, 2, n)])
    y = rng.normal(size=n) * 2
    th = rng.normal(size=3)
    h = 0.8
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MomDerivWarning)
        J = qr_m_theta(Dataset(y, x), th, KernelSpec(TRI, h)).matrix
    ref = np.zeros((3, 3))
    for i in range(n):
        e = y[i] - x[i] @ th
        for k in range(3):
            if x[i, k] == 0:
                continue
            ref[k] += x[i] * np.sign(x[i, k]) * kbar(TRI, e / (abs(x[i, k]) * h)) / h
    np.testing.assert_allclose(J, ref / (n / 6), atol=1e-12)


def test_qr_m_theta_large_sample_vs_oracle():
    o = PopulationOracle()
    th = true_theta(0.5)
    J = qr_m_theta(dgp_sample(100_000, 11), th, KernelSpec(TRI, 1.0)).matrix
    ref = o.qr_M_theta(th)
    assert np.all(np.abs(J / ref - 1) < 0.05)


def test_symmetrize():
    d = dgp_sample(500, 1)
    J = qr_m_theta(d, true_theta(0.5), KernelSpec(TRI, 0.9), symmetrize=True)
    assert J.symmetrized
    np.testing.assert_array_equal(J.matrix, J.matrix.T)


def test_intercept_only_qr_is_inverse_density(rng):
    y = rng.normal(size=50)
    d = Dataset(y, np.ones((50, 1)))
    h = 0.7
    est = qr_theta_u(d, 0.5, KernelSpec(TRI, h))
    med = est.theta[0]

    def kbar_quad(s):
        if abs(s) >= 1:
            return 0.0
        return quad(lambda t: t * kernel_eval(TRI, t), s, 1, points=[0] if s < 0 else None,
                    epsabs=1e-14, epsrel=1e-14)[0]

    dens = sum(kbar_quad((yi - med) / h) for yi in y) / (50 * h * (1 / 6))
    assert est.theta_u[0] == pytest.approx(1 / dens, rel=1e-6)


# --- DR pieces -------------------------------------------------------------

def test_dr_m_theta():
    assert dr_m_theta(_ones([0.0, 1.0]), [0.0]).matrix[0, 0] == pytest.approx(-0.25)
    d = Dataset.unchecked([0.0], np.array([[1.0, 2.0]]))
    np.testing.assert_allclose(dr_m_theta(d, [0.0, 0.0]).matrix, -0.25 * np.array([[1, 2], [2, 4]]))


@pytest.mark.parametrize("h", [0.1, 0.5, 2.0])
def test_dr_m_u_single_observation(h):
    d = _ones([0.3, -50.0, 50.0])
    v = dr_m_u(d, 0.3, KernelSpec(TRI, h)).vector[0] * 3
    assert v == pytest.approx(1 / h)
    assert dr_m_u_interior(d, 0.3, KernelSpec(TRI, h)).vector[0] * 3 == pytest.approx(1 / h)


def test_dr_m_u_far_observations_zero():
    d = _ones([-10.0, 10.0])
    assert dr_m_u(d, 0.0, KernelSpec(TRI, 1.0)).vector[0] == 0.0


def test_dr_m_u_interior_shortcut_agrees():
    d = dgp_sample(3000, 2)
    k = KernelSpec(TRI, 0.4)
    np.testing.assert_allclose(dr_m_u(d, 1.0, k).vector, dr_m_u_interior(d, 1.0, k).vector, atol=1e-12)


def test_dr_m_u_vs_oracle():
    o = PopulationOracle()
    k = KernelSpec(TRI, 0.2)
    est = np.mean([dr_m_u(dgp_sample(100_000, 100 + r), 0.0, k).vector for r in range(8)], axis=0)
    assert np.all(np.abs(est / o.dr_M_u(0.0) - 1) < 0.05)


def _local_linear_definition(y, x, u, h, lo, hi):
    """Kernel-weighted slope of mean(1{Y <= v} X) with the level pinned at v = u."""
    w = lambda v: kernel_eval(TRI, (v - u) / h) / h
    a, b = max(lo, u - h), min(hi, u + h)
    den = quad(lambda v: (v - u) ** 2 * w(v), a, b, points=[u], epsabs=1e-14)[0]
    out = np.zeros(x.shape[1])
    for yi, xi in zip(y, x):
        num = quad(lambda v: (float(yi <= v) - float(yi <= u)) * (v - u) * w(v), a, b,
                   points=sorted({u, min(max(yi, a), b)}), epsabs=1e-14)[0]
        out += num * xi
    return out / (len(y) * den)


@pytest.mark.parametrize("c", [0.2, 0.5, 1.0])
def test_dr_m_u_boundary_matches_definition(c, rng):
    y = rng.normal(size=40)
    x = np.column_stack([np.ones(40), rng.normal(size=40)])
    lo, hi, h = -1.0, 1.5, 0.6
    u = lo + c * h
    got = dr_m_u(Dataset(y, x), u, KernelSpec(TRI, h), IndexInterval(lo, hi)).vector
    np.testing.assert_allclose(got, _local_linear_definition(y, x, u, h, lo, hi), atol=1e-9)


def test_dr_m_u_errors():
    d = _ones([0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        dr_m_u(d, 5.0, KernelSpec(TRI, 0.5))
    # at the lower edge only the right half of the window remains
    assert dr_m_u(d, 0.0, KernelSpec(TRI, 0.5), IndexInterval(0.0, 2.0)).vector.shape == (1,)


def test_dr_intercept_only_assembly():
    d = _ones(np.linspace(-2, 2, 41))
    k = KernelSpec(TRI, 0.5)
    est = dr_theta_u(d, 0.1, k)
    lam = expit(est.theta[0]) * (1 - expit(est.theta[0]))
    assert est.theta_u[0] == pytest.approx(est.m_u.vector[0] / lam)
    assert est.theta_u[0] >= 0
    assert est.diagnostics["interior"]


def test_dr_theta_u_vs_oracle():
    dgp = LinearLogisticDGP(0.0, 1.0, 1.0, 0.0)
    d = dgp.sample(100_000, 5)
    est = dr_variance(d, dr_theta_u(d, 1.0, KernelSpec(TRI, 0.3)))
    se = np.sqrt(np.diag(est.sampling_covariance))
    assert np.all(np.abs(est.theta_u - dgp.dr_true_theta_u(1.0)) < 3 * se)


# --- assembly ------------------------------------------------------------------

@given(v=st.lists(st.floats(-10, 10), min_size=1, max_size=4))
def test_identity_system(v):
    p = len(v)
    out = assemble_theta_u(MomentJacobian(-np.eye(p)), MomentUDeriv(np.array(v)))
    np.testing.assert_allclose(out, v)


def test_diagonal_system():
    out = assemble_theta_u(MomentJacobian(np.diag([-2.0, -4.0])), MomentUDeriv(np.array([1.0, 1.0])))
    np.testing.assert_allclose(out, [0.5, 0.25])


def test_oracle_inputs_give_truth():
    o = PopulationOracle()
    out = assemble_theta_u(MomentJacobian(o.qr_M_theta(true_theta(0.5))), MomentUDeriv(o.qr_M_u()))
    np.testing.assert_allclose(out, [4.0, 4.0], atol=1e-7)


def test_singular_jacobian():
    with pytest.raises(SingularJacobianError):
        assemble_theta_u(MomentJacobian(np.ones((2, 2))), MomentUDeriv(np.ones(2)))


# --- variance --------------------------------------------------------------------

@pytest.fixture(scope="module")
def qr_est():
    d = dgp_sample(2000, 9)
    return d, qr_theta_u(d, 0.5, KernelSpec(TRI, 0.9))


def test_qr_variance_simulation_converges(qr_est):
    d, est = qr_est
    a = qr_variance(d, est, S=100_000, seed=1).variance
    b = qr_variance(d, est, S=200_000, seed=2).variance
    exact = qr_variance_exact(d, est)
    assert np.all(np.abs(np.diag(a) / np.diag(b) - 1) < 0.02)
    assert np.all(np.abs(np.diag(b) / np.diag(exact) - 1) < 0.02)


def test_qr_variance_deterministic(qr_est):
    d, est = qr_est
    np.testing.assert_array_equal(qr_variance(d, est, S=500, seed=3).variance,
                                  qr_variance(d, est, S=500, seed=3).variance)
    v = qr_variance(d, est, S=500, seed=3)
    np.testing.assert_allclose(v.sampling_covariance, v.variance / (d.n * 0.9))
    with pytest.raises(ValueError):
        qr_variance(d, est, S=10)


def test_covariance_diagonal_uses_kbar_square(rng):
    n = 50
    x = np.column_stack([np.ones(n), rng.uniform(0.5, 2, n)])
    dq = rng.uniform(0.1, 1, n)
    C = qr_jacobian_covariance(Dataset(x @ [1.0, 1.0], x), dq, KernelSpec(TRI, 1.0))
    for k in range(2):
        for j in range(2):
            direct = np.mean(x[:, j] ** 2 * x[:, k] * kbar_sq_integral(TRI) * dq) * 36
            assert C[2 * k + j, 2 * k + j] == pytest.approx(direct, rel=1e-12)
    np.testing.assert_allclose(C, C.T, atol=1e-12)
    assert np.linalg.eigvalsh(C).min() > -1e-12


def test_dr_variance_intercept_only(rng):
    y = rng.logistic(size=3000)
    d = Dataset(y, np.ones((3000, 1)))
    est = dr_variance(d, dr_theta_u(d, 0.2, KernelSpec(TRI, 0.4)))
    lam = expit(est.theta[0]) * (1 - expit(est.theta[0]))
    fhat = lam * est.theta_u[0]
    assert est.variance[0, 0] == pytest.approx(gamma_const(TRI, 1.0) * fhat / lam**2, rel=1e-10)
    assert gamma_const(TRI, 1.0) == pytest.approx(26 / 35)
