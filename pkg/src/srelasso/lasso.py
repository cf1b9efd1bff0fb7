"""Weighted-l1 penalized least squares and post-selection OLS refits.

The objective minimized per equation is

    (1/n) * sum_t (y_t - x_t' b)^2  +  (lambda/n) * sum_k |b_k| * psi_k,

so the penalty level carries a sqrt(n) scaling and each coefficient has its
own positive loading ``psi_k``.  The solver is cyclic coordinate descent with
covariance updates; solutions are characterized by the subgradient (KKT)
conditions, which every returned fit is expected to satisfy up to tolerance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data_model import CoefVector
from .errors import ConfigurationError, DataError

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f

        return deco if not (args and callable(args[0])) else args[0]


__all__ = [
    "SolverOptions",
    "LassoProblem",
    "LassoFit",
    "solve_lasso",
    "post_lasso_ols",
    "solve_lasso_path",
    "kkt_violation",
]


@dataclass(frozen=True)
class SolverOptions:
    """Coordinate descent controls.

    Convergence is declared when the largest coefficient change in a full
    sweep drops below ``tol * max(1, max|b|)``.
    """

    tol: float = 1e-7
    max_iter: int = 10_000
    record_objective: bool = False


@dataclass(frozen=True)
class LassoProblem:
    """One equation's penalized regression inputs.

    ``y`` and ``X`` are on the estimation scale (already centered when the
    equation carries an intercept).  Loadings must be strictly positive.
    """

    equation: int
    y: np.ndarray
    X: np.ndarray
    lam: float
    loadings: np.ndarray

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=np.float64)
        X = np.asarray(self.X, dtype=np.float64)
        w = np.asarray(self.loadings, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ConfigurationError(
                f"design/response shape mismatch: X{X.shape} vs y{y.shape}"
            )
        if X.shape[0] < 2 or X.shape[1] < 1:
            raise ConfigurationError("need n >= 2 and K >= 1")
        if w.shape != (X.shape[1],):
            raise ConfigurationError(
                f"loadings shape {w.shape} does not match K={X.shape[1]}"
            )
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise DataError("NaN or infinite values in regression inputs")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ConfigurationError(f"penalty level must be finite and >= 0, got {self.lam}")
        if not np.all(w > 0):
            raise ConfigurationError("penalty loadings must be strictly positive")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "loadings", w)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.X.shape[1]


@dataclass
class LassoFit:
    """Solver output: coefficients, residuals and solve diagnostics."""

    coef: CoefVector
    residuals: np.ndarray
    objective: float
    iterations: int
    converged: bool
    lambda_used: float
    loadings_used: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def objective_value(problem: LassoProblem, beta: np.ndarray) -> float:
    """Penalized objective at ``beta``."""
    r = problem.y - problem.X @ beta
    n = problem.n
    return float(
        r @ r / n + problem.lam / n * np.sum(np.abs(beta) * problem.loadings)
    )


@njit(cache=True)
def _cd_sweeps(gram, grad, thresh, beta, active, max_iter, tol):  # pragma: no cover
    n_iter = 0
    converged = False
    K = gram.shape[0]
    for _ in range(max_iter):
        n_iter += 1
        max_delta = 0.0
        max_abs = 0.0
        for k in range(K):
            if not active[k]:
                continue
            akk = gram[k, k]
            rho = grad[k] + akk * beta[k]
            if rho > thresh[k]:
                new = (rho - thresh[k]) / akk
            elif rho < -thresh[k]:
                new = (rho + thresh[k]) / akk
            else:
                new = 0.0
            d = new - beta[k]
            if d != 0.0:
                beta[k] = new
                for m in range(K):
                    grad[m] -= gram[m, k] * d
            ad = abs(d)
            if ad > max_delta:
                max_delta = ad
            ab = abs(new)
            if ab > max_abs:
                max_abs = ab
        if max_delta < tol * max(1.0, max_abs):
            converged = True
            break
    return n_iter, converged


def _cd_sweeps_py(gram, grad, thresh, beta, active, max_iter, tol, objective_cb=None):
    """Pure-numpy twin of the compiled kernel (used as fallback and by tests)."""
    n_iter = 0
    converged = False
    K = gram.shape[0]
    for _ in range(max_iter):
        n_iter += 1
        max_delta = 0.0
        max_abs = 0.0
        for k in range(K):
            if not active[k]:
                continue
            akk = gram[k, k]
            rho = grad[k] + akk * beta[k]
            if rho > thresh[k]:
                new = (rho - thresh[k]) / akk
            elif rho < -thresh[k]:
                new = (rho + thresh[k]) / akk
            else:
                new = 0.0
            d = new - beta[k]
            if d != 0.0:
                beta[k] = new
                grad -= gram[:, k] * d
            max_delta = max(max_delta, abs(d))
            max_abs = max(max_abs, abs(new))
        if objective_cb is not None:
            objective_cb(beta)
        if max_delta < tol * max(1.0, max_abs):
            converged = True
            break
    return n_iter, converged


def solve_lasso(
    problem: LassoProblem,
    options: SolverOptions | None = None,
    warm_start: np.ndarray | None = None,
) -> LassoFit:
    """Minimize the weighted-l1 objective by cyclic coordinate descent.

    Returns a fit whose coefficients satisfy the KKT conditions up to solver
    tolerance; on hitting ``max_iter`` the fit is returned with
    ``converged=False`` and a diagnostic instead of raising.
    """
    opts = options or SolverOptions()
    X, y, n, K = problem.X, problem.y, problem.n, problem.n_covariates

    gram = (X.T @ X) / n
    xty = (X.T @ y) / n
    thresh = problem.lam * problem.loadings / (2.0 * n)

    diag = np.diag(gram)
    active = diag > 1e-300
    zero_var = np.flatnonzero(~active)

    beta = np.zeros(K) if warm_start is None else np.asarray(warm_start, dtype=np.float64).copy()
    if beta.shape != (K,):
        raise ConfigurationError("warm start has wrong length")
    beta[~active] = 0.0
    grad = xty - gram @ beta

    diagnostics: dict = {}
    if zero_var.size:
        warnings.warn(
            f"equation {problem.equation}: zero-variance columns {zero_var.tolist()} "
            "forced to zero",
            stacklevel=2,
        )
        diagnostics["zero_variance_columns"] = zero_var.tolist()

    if opts.record_objective or not _HAVE_NUMBA:
        trace: list[float] = []
        cb = (lambda b: trace.append(objective_value(problem, b))) if opts.record_objective else None
        iters, converged = _cd_sweeps_py(
            gram, grad, thresh, beta, active, opts.max_iter, opts.tol, cb
        )
        if opts.record_objective:
            diagnostics["objective_trace"] = trace
    else:
        iters, converged = _cd_sweeps(
            gram, grad, thresh, beta, active.astype(np.bool_), opts.max_iter, opts.tol
        )

    if not converged:
        diagnostics["non_convergence"] = (
            f"coordinate descent hit max_iter={opts.max_iter} "
            f"(lambda={problem.lam:.6g})"
        )

    residuals = y - X @ beta
    obj = float(
        residuals @ residuals / n
        + problem.lam / n * np.sum(np.abs(beta) * problem.loadings)
    )
    return LassoFit(
        coef=CoefVector(equation=problem.equation, values=beta),
        residuals=residuals,
        objective=obj,
        iterations=iters,
        converged=converged,
        lambda_used=problem.lam,
        loadings_used=problem.loadings,
        diagnostics=diagnostics,
    )


def kkt_violation(problem: LassoProblem, fit: LassoFit) -> float:
    """Largest violation of the subgradient conditions at the fitted point.

    For active coordinates the score (2/n) x_k'r must equal the signed
    penalty; for inactive ones it must not exceed it.
    """
    r = problem.y - problem.X @ fit.coef.values
    score = 2.0 / problem.n * (problem.X.T @ r)
    pen = problem.lam * problem.loadings / problem.n
    beta = fit.coef.values
    viol = 0.0
    for k in range(problem.n_covariates):
        if beta[k] != 0.0:
            viol = max(viol, abs(score[k] - np.sign(beta[k]) * pen[k]))
        else:
            viol = max(viol, max(0.0, abs(score[k]) - pen[k]))
    return float(viol)


def post_lasso_ols(fit: LassoFit, problem: LassoProblem) -> LassoFit:
    """Unpenalized OLS restricted to the support of ``fit``.

    Empty supports return the zero fit.  Rank-deficient active submatrices are
    solved by minimum-norm least squares and flagged.
    """
    support = fit.coef.support
    X, y, n = problem.X, problem.y, problem.n
    beta = np.zeros(problem.n_covariates)
    diagnostics: dict = {"post_lasso": True, "support_size": int(support.size)}
    if support.size:
        Xa = X[:, support]
        coef_a, _, rank, _ = np.linalg.lstsq(Xa, y, rcond=None)
        beta[support] = coef_a
        if rank < support.size:
            diagnostics["rank_deficient"] = True
    residuals = y - X @ beta
    if support.size:
        diagnostics["active_orthogonality"] = float(
            np.max(np.abs(X[:, support].T @ residuals))
        )
    obj = float(
        residuals @ residuals / n
        + problem.lam / n * np.sum(np.abs(beta) * problem.loadings)
    )
    return LassoFit(
        coef=CoefVector(equation=problem.equation, values=beta),
        residuals=residuals,
        objective=obj,
        iterations=0,
        converged=True,
        lambda_used=problem.lam,
        loadings_used=problem.loadings,
        diagnostics=diagnostics,
    )


def solve_lasso_path(
    problem: LassoProblem,
    lambda_grid: np.ndarray,
    options: SolverOptions | None = None,
) -> list[LassoFit]:
    """Solve at a descending grid of penalty levels with warm starts."""
    grid = np.asarray(lambda_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ConfigurationError("lambda grid must be a nonempty 1-D array")
    if np.any(np.diff(grid) > 0):
        raise ConfigurationError("lambda grid must be sorted in descending order")
    fits: list[LassoFit] = []
    warm = None
    for lam in grid:
        fit = solve_lasso(replace(problem, lam=float(lam)), options, warm_start=warm)
        warm = fit.coef.values.copy()
        fits.append(fit)
    return fits
