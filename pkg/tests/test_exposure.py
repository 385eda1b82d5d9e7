import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flsem.exposure import (
    exposure_loss,
    fgsdar_fit,
    fixed_point_check,
    gcv_score,
    GramBasis,
    predict_zhat,
    ridge_solve_active,
    select_exposure_sparsity,
    top_j,
)
from flsem.numerics import Grid, KernelSpec, gram_matrix

OU = KernelSpec("ornstein_uhlenbeck", 0.3)


def small_problem(seed, n=40, p=6, m=15, support=(0, 2), noise=0.0):
    r = np.random.default_rng(seed)
    grid = Grid.uniform(m)
    t = grid.points
    X = r.standard_normal((n, p))
    C = np.zeros((p, m))
    for k, j in enumerate(support):
        C[j] = (k + 1.5) * np.sin((k + 1) * np.pi * t) + 1.0
    Z = X @ C + noise * r.standard_normal((n, m))
    return X, Z, C, grid


def dense_ridge(X_A, Z, K, lam):
    """Kronecker normal equations solved directly (row-major vec)."""
    n, m = Z.shape
    J = X_A.shape[1]
    A = np.kron(X_A.T @ X_A, K @ K) + n * m * lam * np.kron(np.eye(J), K)
    rhs = (X_A.T @ Z @ K).ravel()
    return np.linalg.solve(A, rhs).reshape(J, m)


class TestRidgeSolve:
    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 10**6), lam=st.sampled_from([1e-6, 1e-4, 1e-2]))
    def test_matches_dense_kronecker(self, seed, lam):
        X, Z, _, grid = small_problem(seed, n=20, p=3, m=8, support=(0, 1), noise=0.3)
        K = gram_matrix(OU, grid)
        fast = ridge_solve_active(X, Z, K, lam)
        assert np.abs(fast - dense_ridge(X, Z, K, lam)).max() <= 1e-8 * max(1, np.abs(fast).max())

    def test_empty_active_set(self, rng):
        assert ridge_solve_active(np.zeros((5, 0)), rng.standard_normal((5, 4)), np.eye(4), 1e-3).shape == (0, 4)

    def test_zero_exposure_gives_zero(self, rng):
        K = gram_matrix(OU, Grid.uniform(10))
        assert not np.any(ridge_solve_active(rng.standard_normal((12, 2)), np.zeros((12, 10)), K, 1e-3))

    def test_shrinks_with_lambda(self):
        X, Z, _, grid = small_problem(3, noise=0.5)
        K = GramBasis(gram_matrix(OU, grid))
        norms = [np.sum((ridge_solve_active(X[:, :3], Z, K, lam) @ K.gram) ** 2)
                 for lam in (1e-5, 1e-3, 1e-1, 10.0)]
        assert all(a > b for a, b in zip(norms, norms[1:]))

    def test_objective_is_minimised(self):
        X, Z, _, grid = small_problem(5, noise=0.5)
        K = gram_matrix(OU, grid)
        C = ridge_solve_active(X[:, :2], Z, K, 1e-3)
        base = exposure_loss(X[:, :2], Z, C, K, 1e-3)
        r = np.random.default_rng(0)
        for _ in range(5):
            P = C + 1e-3 * r.standard_normal(C.shape)
            assert exposure_loss(X[:, :2], Z, P, K, 1e-3) >= base


class TestTopJ:
    def test_ties_go_to_smaller_index(self):
        assert top_j(np.array([1.0, 3.0, 3.0, 0.5]), 1) == (1,)
        assert top_j(np.array([2.0, 2.0, 2.0]), 2) == (0, 1)

    def test_zero(self):
        assert top_j(np.array([1.0, 2.0]), 0) == ()


class TestFgsdar:
    def test_zero_exposure(self):
        X, _, _, grid = small_problem(1)
        fit = fgsdar_fit(X, np.zeros((40, 15)), grid, OU, 2, 1e-3)
        assert not np.any(fit.coef)

    def test_recovers_noiseless_support(self):
        X, Z, C, grid = small_problem(2)
        fit = fgsdar_fit(X, Z, grid, OU, 2, 1e-6)
        assert fit.active_set == (0, 2)
        assert fit.converged

    def test_matches_exhaustive_support_search(self):
        X, Z, C, grid = small_problem(9, noise=0.2)
        K = GramBasis(gram_matrix(OU, grid))
        lam = 1e-5
        best = min(itertools.combinations(range(6), 2),
                   key=lambda s: exposure_loss(X[:, list(s)], Z, ridge_solve_active(X[:, list(s)], Z, K, lam), K, lam))
        assert fgsdar_fit(X, Z, grid, OU, 2, lam, gram=K).active_set == best

    def test_rank_one_first_step(self):
        r = np.random.default_rng(0)
        grid = Grid.uniform(12)
        X = r.standard_normal((50, 4))
        Z = np.outer(X[:, 1], np.ones(12))
        fit = fgsdar_fit(X, Z, grid, OU, 1, 1e-6, max_iter=1)
        assert fit.active_set == (1,)

    def test_full_support_is_global_ridge(self):
        X, Z, _, grid = small_problem(4, p=4, noise=0.5)
        K = gram_matrix(OU, grid)
        fit = fgsdar_fit(X, Z, grid, OU, 4, 1e-3, gram=K)
        assert fit.active_set == (0, 1, 2, 3)
        assert np.allclose(fit.coef, ridge_solve_active(X, Z, K, 1e-3), atol=1e-10)

    def test_values_are_coef_times_gram(self):
        X, Z, _, grid = small_problem(6, noise=0.3)
        K = gram_matrix(OU, grid)
        fit = fgsdar_fit(X, Z, grid, OU, 2, 1e-3, gram=K)
        assert np.allclose(fit.values, fit.coef @ K)
        assert np.array_equal(predict_zhat(fit, X), X @ fit.values)

    def test_loss_bounded_by_zero_fit(self):
        X, Z, _, grid = small_problem(7, noise=1.0)
        fit = fgsdar_fit(X, Z, grid, OU, 2, 1e-3)
        assert fit.loss <= np.sum(Z**2) / (2 * Z.size) + 1e-12

    def test_fixed_point_holds(self):
        X, Z, _, grid = small_problem(8, noise=0.3)
        K = gram_matrix(OU, grid)
        fit = fgsdar_fit(X, Z, grid, OU, 2, 1e-4, gram=K)
        assert fixed_point_check(fit, X, Z, K)

    def test_fixed_point_fails_when_row_zeroed(self):
        X, Z, _, grid = small_problem(8, noise=0.3)
        K = gram_matrix(OU, grid)
        fit = fgsdar_fit(X, Z, grid, OU, 2, 1e-4, gram=K)
        fit.coef = fit.coef.copy()
        fit.coef[fit.active_set[0]] = 0.0
        assert not fixed_point_check(fit, X, Z, K)

    def test_zero_column_never_selected(self):
        X, Z, _, grid = small_problem(10, noise=0.3)
        X = np.column_stack([X, np.zeros(len(X))])
        fit = fgsdar_fit(X, Z, grid, OU, 3, 1e-4)
        assert 6 not in fit.active_set
        assert not np.any(fit.values[6])

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_permutation_equivariance(self, seed):
        X, Z, _, grid = small_problem(seed % 1000, noise=0.2)
        perm = np.random.default_rng(seed).permutation(6)
        a = fgsdar_fit(X, Z, grid, OU, 2, 1e-4)
        b = fgsdar_fit(X[:, perm], Z, grid, OU, 2, 1e-4)
        assert {int(perm[i]) for i in b.active_set} == set(a.active_set)
        assert np.allclose(b.values, a.values[perm], atol=1e-8)

    def test_input_validation(self):
        X, Z, _, grid = small_problem(0)
        with pytest.raises(ValueError):
            fgsdar_fit(X, Z, grid, OU, 7, 1e-3)
        with pytest.raises(ValueError):
            fgsdar_fit(X, Z, grid, OU, 2, -1.0)
        with pytest.raises(ValueError):
            fgsdar_fit(X, Z, grid, OU, 2, "bogus")
        Z = Z.copy()
        Z[0, 0] = np.nan
        with pytest.raises(ValueError):
            fgsdar_fit(X, Z, grid, OU, 2, 1e-3)

    def test_predict_checks_columns(self):
        X, Z, _, grid = small_problem(0)
        fit = fgsdar_fit(X, Z, grid, OU, 2, 1e-3)
        with pytest.raises(ValueError):
            predict_zhat(fit, X[:, :3])


class TestGcv:
    def test_picks_grid_point_and_records_path(self):
        X, Z, _, grid = small_problem(11, noise=0.5)
        lams = [1e-6, 1e-4, 1e-2]
        fit = fgsdar_fit(X, Z, grid, OU, 2, "gcv", lambda_grid=lams)
        assert fit.lambda_k in lams
        assert fit.gcv == min(fit.lambda_path.values())

    def test_empty_support_is_mean_square(self):
        X, Z, _, grid = small_problem(12, noise=0.5)
        K = GramBasis(gram_matrix(OU, grid))
        coef = np.zeros((6, 15))
        assert gcv_score(X, Z, coef, (), K, 1e-3) == pytest.approx(np.mean(Z**2))

    def test_rejects_bad_grid(self):
        X, Z, _, grid = small_problem(0)
        with pytest.raises(ValueError):
            fgsdar_fit(X, Z, grid, OU, 2, "gcv", lambda_grid=[])


class TestSparsitySelection:
    def test_finds_true_size(self):
        X, Z, _, grid = small_problem(13, n=80, p=10, support=(1, 4, 7), noise=0.5)
        fit = select_exposure_sparsity(X, Z, grid, OU, range(1, 7), lambda_k=1e-4)
        assert fit.active_set == (1, 4, 7)


def test_example1_exposure_support(example1, example1_gram):
    fit = fgsdar_fit(example1.X, example1.Z, example1.grid, None, 5, 1e-4, gram=example1_gram)
    assert fit.active_set == (0, 1, 2, 3, 4)
