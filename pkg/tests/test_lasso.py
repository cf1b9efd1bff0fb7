import numpy as np
import pytest

from srelasso.errors import ConfigurationError, DataError
from srelasso.lasso import (
    LassoProblem,
    SolverOptions,
    kkt_violation,
    objective_value,
    post_lasso_ols,
    solve_lasso,
    solve_lasso_path,
)


def random_problem(rng, n=None, K=None, lam=None, equation=0):
    n = n or int(rng.integers(20, 81))
    K = K or int(rng.integers(1, 61))
    X = rng.standard_normal((n, K))
    beta = np.zeros(K)
    s = min(K, 3)
    beta[:s] = rng.standard_normal(s) * 2.0
    y = X @ beta + rng.standard_normal(n)
    lam = lam if lam is not None else float(rng.uniform(0.1, 4.0)) * np.sqrt(n)
    loadings = rng.uniform(0.5, 2.0, size=K)
    return LassoProblem(equation=equation, y=y, X=X, lam=lam, loadings=loadings)


def grid_search_minimum(problem, radius=15.0, rounds=6, points=25):
    """Independent oracle: nested grid search over the coefficient box."""
    K = problem.n_covariates
    assert K <= 3, "grid oracle only for tiny K"
    center = np.zeros(K)
    width = radius
    best = None
    for _ in range(rounds):
        axes = [np.linspace(center[k] - width, center[k] + width, points) for k in range(K)]
        mesh = np.meshgrid(*axes, indexing="ij")
        betas = np.stack([m.ravel() for m in mesh], axis=1)
        resid = problem.y[None, :] - betas @ problem.X.T
        obj = (resid**2).sum(axis=1) / problem.n + (
            problem.lam / problem.n
        ) * (np.abs(betas) * problem.loadings[None, :]).sum(axis=1)
        best_idx = int(np.argmin(obj))
        center = betas[best_idx]
        best = obj[best_idx]
        width = width * 2.2 / (points - 1)
    return center, best


class TestSolveLasso:
    def test_full_shrinkage(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((30, 4))
        y = rng.standard_normal(30)
        lam = 2.0 * float(np.max(np.abs(X.T @ y))) + 1.0
        fit = solve_lasso(LassoProblem(equation=0, y=y, X=X, lam=lam, loadings=np.ones(4)))
        assert np.all(fit.coef.values == 0.0)
        assert fit.converged

    def test_lambda_zero_orthonormal_is_ols(self):
        rng = np.random.default_rng(2)
        n, K = 64, 4
        # orthonormal columns scaled so that X'X/n = I
        Q, _ = np.linalg.qr(rng.standard_normal((n, K)))
        X = Q * np.sqrt(n)
        y = rng.standard_normal(n)
        fit = solve_lasso(LassoProblem(equation=0, y=y, X=X, lam=0.0, loadings=np.ones(K)))
        np.testing.assert_allclose(fit.coef.values, X.T @ y / n, atol=1e-9)

    def test_matches_grid_search_oracle(self):
        rng = np.random.default_rng(3)
        n, K = 50, 3
        X = rng.standard_normal((n, K))
        y = X @ np.array([2.0, -1.0, 0.0]) + rng.standard_normal(n)
        problem = LassoProblem(equation=0, y=y, X=X, lam=10.0, loadings=np.ones(K))
        fit = solve_lasso(problem)
        oracle_beta, oracle_obj = grid_search_minimum(problem)
        np.testing.assert_allclose(fit.coef.values, oracle_beta, atol=1e-4)
        assert fit.objective <= oracle_obj + 1e-6

    def test_kkt_on_many_random_instances(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(200):
            problem = random_problem(rng)
            fit = solve_lasso(problem)
            scale = float(np.max(np.abs(problem.X.T @ problem.y)) / problem.n + 1.0)
            worst = max(worst, kkt_violation(problem, fit) / scale)
        assert worst < 1e-5

    def test_objective_identity(self):
        rng = np.random.default_rng(5)
        problem = random_problem(rng)
        fit = solve_lasso(problem)
        recomputed = objective_value(problem, fit.coef.values)
        assert fit.objective == pytest.approx(recomputed, rel=1e-10)
        np.testing.assert_allclose(
            fit.residuals, problem.y - problem.X @ fit.coef.values, atol=1e-12
        )

    def test_objective_monotone_over_sweeps(self):
        rng = np.random.default_rng(6)
        problem = random_problem(rng, n=40, K=20)
        fit = solve_lasso(problem, SolverOptions(record_objective=True))
        trace = fit.diagnostics["objective_trace"]
        assert len(trace) >= 2
        diffs = np.diff(np.asarray(trace))
        assert np.all(diffs <= 1e-12 * max(1.0, abs(trace[0])))

    def test_python_and_compiled_paths_agree(self):
        rng = np.random.default_rng(7)
        problem = random_problem(rng, n=50, K=12)
        fast = solve_lasso(problem)
        slow = solve_lasso(problem, SolverOptions(record_objective=True))
        np.testing.assert_allclose(fast.coef.values, slow.coef.values, atol=1e-10)

    def test_homogeneity_lambda_zero(self):
        rng = np.random.default_rng(8)
        n, K = 60, 5
        X = rng.standard_normal((n, K))
        y = rng.standard_normal(n)
        base = solve_lasso(LassoProblem(equation=0, y=y, X=X, lam=0.0, loadings=np.ones(K)))
        scaled = solve_lasso(LassoProblem(equation=0, y=3.0 * y, X=X, lam=0.0, loadings=np.ones(K)))
        np.testing.assert_allclose(scaled.coef.values, 3.0 * base.coef.values, rtol=1e-6, atol=1e-8)

    def test_homogeneity_joint_scaling(self):
        rng = np.random.default_rng(9)
        n, K = 60, 8
        X = rng.standard_normal((n, K))
        y = X @ np.array([1.0, -2.0] + [0.0] * 6) + rng.standard_normal(n)
        lam = 20.0
        w = rng.uniform(0.5, 1.5, K)
        base = solve_lasso(LassoProblem(equation=0, y=y, X=X, lam=lam, loadings=w))
        c = 2.5
        scaled = solve_lasso(LassoProblem(equation=0, y=c * y, X=X, lam=c * lam, loadings=w))
        np.testing.assert_allclose(scaled.coef.values, c * base.coef.values, rtol=1e-8, atol=1e-10)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(10)
        problem = random_problem(rng, n=50, K=10)
        tight = SolverOptions(tol=1e-13)
        fit = solve_lasso(problem, tight)
        perm = rng.permutation(10)
        permuted = LassoProblem(
            equation=0,
            y=problem.y,
            X=problem.X[:, perm],
            lam=problem.lam,
            loadings=problem.loadings[perm],
        )
        fit_p = solve_lasso(permuted, tight)
        np.testing.assert_allclose(fit_p.coef.values, fit.coef.values[perm], atol=1e-10)

    def test_nan_input_rejected(self):
        X = np.ones((10, 2))
        y = np.ones(10)
        y[3] = np.nan
        with pytest.raises(DataError):
            LassoProblem(equation=0, y=y, X=X, lam=1.0, loadings=np.ones(2))

    def test_nonpositive_loadings_rejected(self):
        with pytest.raises(ConfigurationError):
            LassoProblem(
                equation=0, y=np.ones(5), X=np.ones((5, 1)), lam=1.0, loadings=np.zeros(1)
            )

    def test_zero_variance_column_warned(self):
        rng = np.random.default_rng(11)
        X = rng.standard_normal((30, 3))
        X[:, 1] = 0.0
        y = rng.standard_normal(30)
        with pytest.warns(UserWarning, match="zero-variance"):
            fit = solve_lasso(LassoProblem(equation=0, y=y, X=X, lam=1.0, loadings=np.ones(3)))
        assert fit.coef.values[1] == 0.0


class TestPostLasso:
    def test_full_support_equals_ols(self):
        rng = np.random.default_rng(12)
        n, K = 40, 5
        X = rng.standard_normal((n, K))
        y = rng.standard_normal(n)
        problem = LassoProblem(equation=0, y=y, X=X, lam=0.0, loadings=np.ones(K))
        fit = solve_lasso(problem)
        refit = post_lasso_ols(fit, problem)
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        np.testing.assert_allclose(refit.coef.values, ols, atol=1e-8)

    def test_empty_support(self):
        rng = np.random.default_rng(13)
        X = rng.standard_normal((20, 3))
        y = rng.standard_normal(20)
        lam = 2.0 * float(np.max(np.abs(X.T @ y))) + 1.0
        problem = LassoProblem(equation=0, y=y, X=X, lam=lam, loadings=np.ones(3))
        refit = post_lasso_ols(solve_lasso(problem), problem)
        assert np.all(refit.coef.values == 0.0)
        np.testing.assert_allclose(refit.residuals, y)

    def test_residuals_orthogonal_to_active(self):
        rng = np.random.default_rng(14)
        problem = random_problem(rng, n=60, K=15, lam=15.0)
        refit = post_lasso_ols(solve_lasso(problem), problem)
        support = refit.coef.support
        if support.size:
            gram = problem.X[:, support].T @ refit.residuals
            scale = max(1.0, float(np.max(np.abs(problem.X))) * float(np.std(problem.y)))
            assert np.max(np.abs(gram)) <= 1e-8 * problem.n * scale

    def test_rank_deficient_flagged(self):
        rng = np.random.default_rng(15)
        X = rng.standard_normal((30, 3))
        X = np.column_stack([X, X[:, 0]])  # duplicate column
        y = X[:, 0] * 2.0 + rng.standard_normal(30)
        problem = LassoProblem(equation=0, y=y, X=X, lam=0.0, loadings=np.ones(4))
        fit = solve_lasso(problem, SolverOptions(max_iter=200))
        # force a support containing both duplicates
        fit.coef = type(fit.coef)(equation=0, values=np.array([1.0, 0.0, 0.0, 1.0]))
        refit = post_lasso_ols(fit, problem)
        assert refit.diagnostics.get("rank_deficient")

    def test_beats_lasso_prediction_error_usually(self):
        # post refit should beat the shrunken fit once shrinkage bias dominates
        rng = np.random.default_rng(16)
        wins = 0
        reps = 100
        for _ in range(reps):
            n, K = 60, 10
            X = rng.standard_normal((n, K))
            beta = np.zeros(K)
            beta[:2] = [4.0, -3.0]
            y = X @ beta + rng.standard_normal(n)
            problem = LassoProblem(equation=0, y=y, X=X, lam=6.0 * np.sqrt(n), loadings=np.ones(K))
            fit = solve_lasso(problem)
            assert set([0, 1]) <= set(fit.coef.support.tolist())
            refit = post_lasso_ols(fit, problem)
            err_lasso = np.linalg.norm(X @ (fit.coef.values - beta))
            err_post = np.linalg.norm(X @ (refit.coef.values - beta))
            wins += err_post <= err_lasso
        assert wins >= 0.8 * reps


class TestLassoPath:
    def test_single_value_matches_solve(self):
        rng = np.random.default_rng(17)
        problem = random_problem(rng, n=50, K=8, lam=12.0)
        path = solve_lasso_path(problem, np.array([12.0]))
        direct = solve_lasso(problem)
        np.testing.assert_allclose(path[0].coef.values, direct.coef.values, atol=1e-12)

    def test_huge_lambda_gives_zero(self):
        rng = np.random.default_rng(18)
        problem = random_problem(rng, n=40, K=6)
        path = solve_lasso_path(problem, np.array([1e12]))
        assert np.all(path[0].coef.values == 0.0)

    def test_warm_start_agrees_with_cold(self):
        rng = np.random.default_rng(19)
        problem = random_problem(rng, n=60, K=12, lam=1.0)
        grid = np.array([40.0, 20.0, 10.0, 5.0])
        path = solve_lasso_path(problem, grid)
        for lam, fit in zip(grid, path):
            from dataclasses import replace

            cold = solve_lasso(replace(problem, lam=float(lam)))
            np.testing.assert_allclose(fit.coef.values, cold.coef.values, atol=1e-6)

    def test_rejects_ascending_grid(self):
        rng = np.random.default_rng(20)
        problem = random_problem(rng)
        with pytest.raises(ConfigurationError):
            solve_lasso_path(problem, np.array([1.0, 2.0]))
