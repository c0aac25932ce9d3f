import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from momderiv.data import Dataset
from momderiv.montecarlo import dgp_sample, replication_seed, true_theta
from momderiv.qr import CoefProcess, QRFitError, check_loss, qr_fit, qr_objective, qr_process


def lp_objective(x, y, u):
    """Check-loss minimum from the primal LP solved by HiGHS."""
    n, p = x.shape
    c = np.concatenate([np.zeros(2 * p), u * np.ones(n), (1 - u) * np.ones(n)])
    A = np.hstack([x, -x, np.eye(n), -np.eye(n)])
    res = linprog(c, A_eq=A, b_eq=y, bounds=(0, None), method="highs")
    return res.fun


def test_median_of_three():
    d = Dataset([1.0, 2.0, 3.0], np.ones((3, 1)))
    assert qr_fit(d, 0.5).theta[0] == pytest.approx(2.0)


def test_tie_interval():
    d = Dataset([1.0, 2.0, 3.0, 4.0], np.ones((4, 1)))
    est = qr_fit(d, 0.25)
    assert 1.0 - 1e-9 <= est.theta[0] <= 2.0 + 1e-9
    assert est.objective == pytest.approx(qr_objective(d.y, d.x, [1.0], 0.25))


def test_bad_level():
    d = Dataset([1.0, 2.0], np.ones((2, 1)))
    with pytest.raises(ValueError):
        qr_fit(d, 1.0)
    with pytest.raises(ValueError):
        qr_process(d, [0.2, 0.1])


def test_check_loss():
    np.testing.assert_allclose(check_loss(np.array([-2.0, 3.0]), 0.25), [1.5, 0.75])


@given(seed=st.integers(0, 10_000), n=st.integers(5, 60), u=st.floats(0.05, 0.95))
def test_matches_lp(seed, n, u):
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.normal(size=n), rng.exponential(size=n)])
    y = x @ [1.0, 0.5, -0.3] + rng.standard_t(3, size=n)
    est = qr_fit(Dataset(y, x), u)
    ref = lp_objective(x, y, u)
    assert est.converged
    assert est.objective <= ref + 1e-7 * max(1.0, abs(ref))


@given(seed=st.integers(0, 10_000), n=st.integers(8, 60))
def test_optimality_subgradient(seed, n):
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = x @ [0.0, 1.0] + rng.logistic(size=n)
    u = 0.3
    th = qr_fit(Dataset(y, x), u).theta
    f0 = qr_objective(y, x, th, u)
    for d in np.eye(2):
        for step in (1e-4, -1e-4):
            assert qr_objective(y, x, th + step * d, u) >= f0 - 1e-10


def test_intercept_only_process_is_empirical_quantile(rng):
    y = rng.normal(size=301)
    d = Dataset(y, np.ones((301, 1)))
    grid = np.linspace(0.01, 0.99, 99)
    proc = qr_process(d, grid)
    ys = np.sort(y)
    for g, th in zip(grid, proc.thetas[:, 0]):
        lo, hi = ys[int(np.ceil(301 * g)) - 1], ys[min(int(np.floor(301 * g)), 300)]
        assert min(lo, hi) - 1e-9 <= th <= max(lo, hi) + 1e-9


def test_singleton_grid_matches_fit():
    d = dgp_sample(200, 3)
    proc = qr_process(d, [0.5])
    np.testing.assert_allclose(proc.thetas[0], qr_fit(d, 0.5).theta, atol=1e-8)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_path_equals_interior_point(seed):
    d = dgp_sample(400, seed)
    grid = np.round(np.arange(0.1, 0.9001, 0.01), 10)
    a = qr_process(d, grid, method="path")
    b = qr_process(d, grid, method="ipm")
    for g, ta, tb in zip(grid, a.thetas, b.thetas):
        assert qr_objective(d.y, d.x, ta, g) == pytest.approx(qr_objective(d.y, d.x, tb, g), rel=1e-9)


def test_path_with_ties_falls_back():
    rng = np.random.default_rng(0)
    x = np.column_stack([np.ones(80), rng.integers(0, 3, 80)])
    y = rng.integers(0, 5, 80).astype(float)
    d = Dataset(y, x)
    grid = np.linspace(0.1, 0.9, 17)
    proc = qr_process(d, grid)
    for g, th in zip(grid, proc.thetas):
        assert qr_objective(y, x, th, g) == pytest.approx(lp_objective(x, y, g), abs=1e-7)


def test_consistency_across_seeds():
    est = np.array([qr_fit(dgp_sample(4000, replication_seed(7, 4000, r)), 0.5).theta for r in range(60)])
    se = est.std(axis=0, ddof=1) / np.sqrt(len(est))
    assert np.all(np.abs(est.mean(axis=0) - true_theta(0.5)) < 3.5 * se)


def test_process_band():
    grid = np.round(np.arange(0.1, 0.9001, 0.05), 10)
    procs = np.array([qr_process(dgp_sample(1000, replication_seed(3, 1000, r)), grid).thetas
                      for r in range(40)])
    mean, sd = procs.mean(axis=0), procs.std(axis=0, ddof=1)
    truth = np.array([true_theta(g) for g in grid])
    assert np.all(np.abs(mean - truth) < 3.5 * sd / np.sqrt(40))


def test_coef_process_validation():
    with pytest.raises(ValueError):
        CoefProcess([0.1, 0.1], np.zeros((2, 1)))
    p = CoefProcess([0.1, 0.2], [[1.0], [2.0]])
    assert p.at(0.19)[0] == 2.0
