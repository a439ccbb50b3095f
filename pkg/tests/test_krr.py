import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kfs.kernels import gaussian, gram_matrix, laplace
from kfs.krr import DataError, Dataset, SolverError, fit_krr, objective_value, solve_krr


def random_problem(seed, n=30, p=4, spec=None):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = np.sin(X[:, 0]) + 0.5 * rng.standard_normal(n)
    beta = rng.uniform(0, 1.5, p)
    K = gram_matrix(spec or laplace(), X, beta)
    return K, y, X, beta


def test_one_by_one_closed_form():
    fit = solve_krr(np.array([[1.0]]), np.array([3.0]), 0.5)
    np.testing.assert_allclose(fit.alpha, [2.0])
    np.testing.assert_allclose(fit.fitted, [2.0])
    np.testing.assert_allclose(fit.residuals, [1.0])


def test_huge_ridge_gives_null_fit():
    K, y, _, _ = random_problem(0)
    fit = solve_krr(K, y, 1e6)
    assert np.linalg.norm(fit.fitted) <= 1e-4 * np.linalg.norm(y)
    assert np.linalg.norm(fit.residuals - y) <= 1e-4 * np.linalg.norm(y)


@pytest.mark.parametrize("seed", range(5))
def test_matches_dense_inverse(seed):
    K, y, _, _ = random_problem(seed)
    lam = 10.0 ** np.random.default_rng(seed).uniform(-3, 0)
    fit = solve_krr(K, y, lam)
    oracle = np.linalg.inv(K + 30 * lam * np.eye(30)) @ y
    assert np.linalg.norm(fit.alpha - oracle) <= 1e-8 * np.linalg.norm(oracle)


def test_fit_fields_are_consistent():
    K, y, _, _ = random_problem(1)
    lam = 0.05
    fit = solve_krr(K, y, lam)
    np.testing.assert_allclose(fit.residuals, y - fit.fitted, atol=1e-14)
    np.testing.assert_allclose(fit.fitted, K @ fit.alpha, atol=1e-13)
    assert fit.rkhs_norm_sq >= 0
    assert fit.objective == pytest.approx(0.5 * np.mean(fit.residuals ** 2) + 0.5 * lam * fit.rkhs_norm_sq)
    # residual form of the dual: r = n lam alpha
    np.testing.assert_allclose(fit.residuals, 30 * lam * fit.alpha, rtol=1e-9, atol=1e-12)


def test_objective_at_zero_beta_closed_form():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((12, 3))
    y = rng.standard_normal(12) + 1.5
    lam = 0.3
    data = Dataset.from_arrays(X, y, center=False)
    h0 = 1.0
    s = y.mean() / (lam + h0)  # sum of alpha for the rank-one Gram h0 * 11'
    c = h0 * s
    expected = 0.5 * np.mean((y - c) ** 2) + 0.5 * lam * h0 * s * s
    assert objective_value(laplace(), data, np.zeros(3), lam) == pytest.approx(expected, rel=1e-12)
    # with centered y the constant kernel fits nothing
    centered = Dataset.from_arrays(X, y)
    assert objective_value(laplace(), centered, np.zeros(3), lam) == pytest.approx(0.5 * np.mean(centered.y ** 2))


def test_zero_response():
    data = Dataset.from_arrays(np.random.default_rng(0).standard_normal((8, 2)), np.zeros(8))
    fit = fit_krr(gaussian(), data, np.ones(2), 0.1)
    assert fit.objective == 0.0
    assert np.all(fit.alpha == 0)


@pytest.mark.parametrize("seed", range(5))
def test_objective_continuous_in_beta(seed):
    rng = np.random.default_rng(seed)
    data = Dataset.from_arrays(rng.standard_normal((25, 4)), rng.standard_normal(25))
    beta = rng.uniform(0.1, 1, 4)
    base = objective_value(laplace(), data, beta, 0.1)
    gaps = []
    for delta in (1e-2, 1e-4, 1e-6):
        bumped = beta.copy()
        bumped[seed % 4] += delta
        gaps.append(abs(objective_value(laplace(), data, bumped, 0.1) - base))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-5


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), lam=st.floats(1e-4, 10.0), q=st.sampled_from([1, 2]))
def test_residual_norm_bounded_by_response(seed, lam, q):
    K, y, _, _ = random_problem(seed, n=15, spec=laplace() if q == 1 else gaussian())
    fit = solve_krr(K, y, lam)
    assert np.linalg.norm(fit.residuals) <= np.linalg.norm(y) + 1e-10


def test_objective_stable_across_jitter():
    K, y, _, _ = random_problem(4)
    a = solve_krr(K, y, 0.01)
    b = solve_krr(K, y, 0.01, jitter=1e-10)
    assert a.jitter == 0.0
    assert abs(a.objective - b.objective) <= 1e-8 * abs(a.objective)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_permutation_equivariance(seed):
    K, y, _, _ = random_problem(seed, n=12)
    perm = np.random.default_rng(seed + 1).permutation(12)
    a = solve_krr(K, y, 0.1)
    b = solve_krr(K[np.ix_(perm, perm)], y[perm], 0.1)
    np.testing.assert_allclose(b.alpha, a.alpha[perm], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(b.residuals, a.residuals[perm], rtol=1e-9, atol=1e-12)
    assert b.objective == pytest.approx(a.objective, rel=1e-12)


def test_solver_error_carries_diagnostics():
    K = -5.0 * np.eye(4)
    with pytest.raises(SolverError) as info:
        solve_krr(K, np.ones(4), 0.1)
    diag = info.value.diagnostics
    assert diag["min_eig"] < 0
    assert {"condition", "last_jitter", "lambda", "n"} <= set(diag)


def test_solve_rejects_bad_inputs():
    with pytest.raises(ValueError):
        solve_krr(np.eye(2), np.ones(2), 0.0)
    with pytest.raises(DataError):
        solve_krr(np.eye(3), np.ones(2), 1.0)


def test_dataset_centering_and_validation():
    X = np.arange(12.0).reshape(4, 3)
    data = Dataset.from_arrays(X, [1.0, 2.0, 3.0, 10.0])
    assert data.centered and data.y_mean == 4.0
    assert abs(data.y.mean()) <= 1e-15
    assert data.feature_names == ("x1", "x2", "x3")
    assert (data.n, data.p) == (4, 3)
    with pytest.raises(ValueError):
        data.y[0] = 1.0
    with pytest.raises(DataError):
        Dataset(X, np.ones(4), centered=True)
    with pytest.raises(DataError):
        Dataset.from_arrays(X, [1.0, np.nan, 0.0, 0.0])
    with pytest.raises(DataError):
        Dataset.from_arrays(np.zeros((4, 0)), np.zeros(4))
    with pytest.raises(DataError):
        Dataset.from_arrays(X, np.zeros(3))


def test_dataset_subset_recenters():
    data = Dataset.from_arrays(np.arange(8.0).reshape(4, 2), [0.0, 2.0, 4.0, 10.0])
    sub = data.subset([0, 1])
    assert sub.y_mean == pytest.approx(1.0)
    np.testing.assert_allclose(sub.y, [-1.0, 1.0])
