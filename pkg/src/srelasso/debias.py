"""De-biased estimation of target coefficients.

Three routes remove the shrinkage bias of a penalized fit for a single
coefficient: an instrumental-variables correction under squared loss, the
same correction under absolute loss (robust to heavy tails), and a double
selection refit on the union of selected supports.  All three produce a
studentized estimate with a score series whose long-run variance feeds the
bootstrap inference step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csc_matrix, hstack, identity

from .data_model import CoefVector, PanelDataset, TargetSet
from .errors import ConfigurationError, NumericalError
from .lasso import LassoFit, LassoProblem, SolverOptions, post_lasso_ols, solve_lasso
from .lrv import BlockScheme, HacOptions, loadings_for_design, omega_jk
from .penalty import (
    PenaltyPlan,
    TuneConfig,
    _multiplier_max_stats,
    fit_with_plan,
    lambda_gaussian_canonical,
    order_statistic_quantile,
    run_pilot_then_tune,
)

__all__ = [
    "DebiasConfig",
    "InstrumentFit",
    "DebiasedEstimate",
    "fit_instrument",
    "ls_iv_estimate",
    "lad_iv_estimate",
    "double_selection_estimate",
    "run_algorithm",
    "lad_regression",
]

_METHODS = ("ls-iv", "lad-iv", "double-ls", "double-lad")
_STREAM_INSTRUMENT = 202


@dataclass(frozen=True)
class DebiasConfig:
    """Controls for the de-biasing pipeline."""

    tune: TuneConfig = field(default_factory=TuneConfig)
    post_lasso: bool = True
    instrument_penalty: str = "bootstrap"  # "bootstrap" | "reuse" | "gaussian"
    density_bandwidth_factor: float = 1.06

    def __post_init__(self) -> None:
        if self.instrument_penalty not in ("bootstrap", "reuse", "gaussian"):
            raise ConfigurationError(
                f"unknown instrument penalty policy '{self.instrument_penalty}'"
            )


@dataclass
class InstrumentFit:
    """Residualization of a target covariate on the remaining regressors.

    ``gamma`` is indexed over ``other_positions`` (the equation's covariate
    list with the target removed); ``v_hat`` is the instrument series.
    """

    target: tuple[int, int]
    gamma: np.ndarray
    other_positions: np.ndarray
    v_hat: np.ndarray
    lam: float
    loadings: np.ndarray
    degenerate: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def support(self) -> np.ndarray:
        """Selected positions, in the equation's covariate indexing."""
        return self.other_positions[np.flatnonzero(self.gamma != 0.0)]


@dataclass
class DebiasedEstimate:
    """A de-biased coefficient with its studentization pieces.

    ``sigma`` scales the pivot sqrt(n) (beta2 - b0) / sigma; ``zeta_series``
    is the standardized score whose block multiplier bootstrap mimics the
    pivot's null distribution.
    """

    target: tuple[int, int]
    method: str
    beta2: float
    phi: float
    omega: float
    sigma: float
    score_series: np.ndarray
    zeta_series: np.ndarray
    beta1: CoefVector | None = None
    instrument: InstrumentFit | None = None
    omega_floored: bool = False
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _split_design(data: PanelDataset, target: tuple[int, int]):
    j, k = target
    spec = data.equation_specs[j]
    if not 0 <= k < spec.n_covariates:
        raise ConfigurationError(f"target {target}: covariate position out of range")
    if spec.n_covariates < 2:
        raise ConfigurationError(f"target {target}: need at least 2 covariates")
    y, X = data.estimation_design(j)
    others = np.array([m for m in range(spec.n_covariates) if m != k])
    return y, X[:, k].copy(), X[:, others], others


def _sd(x: np.ndarray) -> float:
    return float(np.std(x))


def _silverman_density_at_zero(resid: np.ndarray, factor: float = 1.06) -> float:
    """Gaussian-kernel density estimate of the residual law at zero."""
    n = resid.shape[0]
    scale = _sd(resid)
    if scale <= 0.0:
        return 0.0
    h = factor * scale * n ** (-0.2)
    z = resid / h
    return float(np.mean(np.exp(-0.5 * z * z)) / (h * math.sqrt(2.0 * math.pi)))


def lad_regression(y: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Least absolute deviations fit via linear programming (HiGHS).

    Minimizes sum |y - X b| over b; returns the coefficient vector.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, p = X.shape
    cost = np.concatenate([np.zeros(p), np.ones(2 * n)])
    eye = identity(n, format="csc")
    A_eq = hstack([csc_matrix(X), eye, -eye], format="csc")
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = linprog(cost, A_eq=A_eq, b_eq=y, bounds=bounds, method="highs")
    if not res.success:
        raise NumericalError(f"LAD linear program failed: {res.message}")
    return res.x[:p]


# ---------------------------------------------------------------------------
# instrument fits
# ---------------------------------------------------------------------------


def _instrument_stage1(
    data: PanelDataset,
    target: tuple[int, int],
    lam_pilot: float,
    hac: HacOptions,
    solver: SolverOptions,
):
    """Initial loadings and pilot residualization for one target."""
    j, k = target
    y_unused, x, Z, others = _split_design(data, target)
    if _sd(x) == 0.0:
        return x, Z, others, None, x - x.mean(), None
    init_loadings, _ = loadings_for_design(Z, x - x.mean(), hac)
    pilot = solve_lasso(
        LassoProblem(equation=j, y=x, X=Z, lam=lam_pilot, loadings=init_loadings),
        solver,
    )
    v0 = x - Z @ pilot.coef.values
    refined, _ = loadings_for_design(Z, v0, hac)
    return x, Z, others, pilot, v0, refined


def _instrument_final(
    data: PanelDataset,
    target: tuple[int, int],
    x: np.ndarray,
    Z: np.ndarray,
    others: np.ndarray,
    loadings: np.ndarray | None,
    lam: float,
    solver: SolverOptions,
    post: bool,
) -> InstrumentFit:
    j, k = target
    diagnostics: dict = {}
    if loadings is None:  # constant target column
        return InstrumentFit(
            target=(j, k),
            gamma=np.zeros(Z.shape[1]),
            other_positions=others,
            v_hat=x - x.mean(),
            lam=lam,
            loadings=np.ones(Z.shape[1]),
            degenerate=True,
            diagnostics={"constant_target_column": True},
        )
    problem = LassoProblem(equation=j, y=x, X=Z, lam=lam, loadings=loadings)
    fit = solve_lasso(problem, solver)
    selection = fit.coef.support
    if post:
        fit = post_lasso_ols(fit, problem)
    v_hat = x - Z @ fit.coef.values
    degenerate = _sd(v_hat) < 1e-10 * _sd(x)
    if degenerate:
        diagnostics["collinear_target_column"] = True
    diagnostics["selection_support"] = selection.tolist()
    return InstrumentFit(
        target=(j, k),
        gamma=fit.coef.values,
        other_positions=others,
        v_hat=v_hat,
        lam=lam,
        loadings=loadings,
        degenerate=degenerate,
        diagnostics=diagnostics,
    )


def fit_instrument(
    data: PanelDataset,
    target: tuple[int, int],
    penalty: PenaltyPlan | float,
    config: DebiasConfig | None = None,
) -> InstrumentFit:
    """Residualize the target covariate on its co-regressors by (post-)LASSO.

    Loadings are initialized from the centered target column and refined once
    from the pilot residuals; the same penalty level is used in both passes.
    """
    cfg = config or DebiasConfig()
    lam = penalty.lam_joint if isinstance(penalty, PenaltyPlan) else float(penalty)
    if lam is None:
        raise ConfigurationError("penalty plan carries no joint level")
    hac = HacOptions(cfg.tune.bandwidth)
    x, Z, others, _, _, refined = _instrument_stage1(
        data, target, lam, hac, cfg.tune.solver
    )
    return _instrument_final(
        data, target, x, Z, others, refined, lam, cfg.tune.solver, cfg.post_lasso
    )


# ---------------------------------------------------------------------------
# the three estimation routes
# ---------------------------------------------------------------------------


def _check_instrument_strength(v: np.ndarray, x: np.ndarray, target) -> float:
    denom = float(v @ x)
    n = v.shape[0]
    sv, sx = _sd(v), _sd(x)
    if sv == 0.0 or abs(denom) / n < 1e-8 * sv * sx:
        raise NumericalError(
            f"weak instrument for target {target}: |v'x|/n too small; "
            "consider the double selection method"
        )
    return denom


def _studentize(
    score: np.ndarray, phi: float, scheme: BlockScheme
) -> tuple[float, float, bool, np.ndarray]:
    omega, floored = omega_jk(score, scheme)
    sigma = math.sqrt(omega) / abs(phi)
    zeta = -score / (phi * sigma)
    return omega, sigma, floored, zeta


def ls_iv_estimate(
    data: PanelDataset,
    target: tuple[int, int],
    beta1: CoefVector,
    instrument: InstrumentFit,
    scheme: BlockScheme,
) -> DebiasedEstimate:
    """Squared-loss IV correction of a penalized coefficient.

    The estimate regresses the partialled-out response on the target column
    with the residualized column as instrument; its score series and
    derivative feed the studentization.
    """
    j, k = target
    y, x, Z, others = _split_design(data, target)
    if instrument.degenerate:
        raise NumericalError(
            f"degenerate instrument for target {target}; consider double selection"
        )
    v = instrument.v_hat
    denom = _check_instrument_strength(v, x, target)
    b1 = beta1.values[others]
    y_tilde = y - Z @ b1
    beta2 = float(v @ y_tilde) / denom

    # algebraically expanded form: same value, different float path
    beta2_alt = float(v @ y) / denom - float((v @ Z) @ b1) / denom

    n = y.shape[0]
    score = (y_tilde - x * beta2) * v
    phi = -denom / n
    omega, sigma, floored, zeta = _studentize(score, phi, scheme)
    return DebiasedEstimate(
        target=(j, k),
        method="ls-iv",
        beta2=beta2,
        phi=phi,
        omega=omega,
        sigma=sigma,
        score_series=score,
        zeta_series=zeta,
        beta1=beta1,
        instrument=instrument,
        omega_floored=floored,
        diagnostics={
            "two_form_values": (beta2, beta2_alt),
            "score_mean": float(score.mean()),
            "zeta_mean": float(zeta.mean()),
        },
    )


def _lad_moment(y_tilde: np.ndarray, x: np.ndarray, v: np.ndarray, beta: float) -> float:
    return float(np.mean((0.5 - (y_tilde <= x * beta)) * v))


def lad_iv_estimate(
    data: PanelDataset,
    target: tuple[int, int],
    beta1: CoefVector,
    instrument: InstrumentFit,
    scheme: BlockScheme,
    density_bandwidth_factor: float = 1.06,
) -> DebiasedEstimate:
    """Absolute-loss IV correction, solved by bracketed bisection.

    The empirical moment m(b) = mean({1/2 - 1(ytilde <= x b)} v) changes sign
    at the estimate; the bracket is centered at the squared-loss solution and
    widened up to six times if needed.
    """
    j, k = target
    y, x, Z, others = _split_design(data, target)
    if instrument.degenerate:
        raise NumericalError(
            f"degenerate instrument for target {target}; consider double selection"
        )
    v = instrument.v_hat
    _check_instrument_strength(v, x, target)
    b1 = beta1.values[others]
    y_tilde = y - Z @ b1
    n = y.shape[0]

    ls = ls_iv_estimate(data, target, beta1, instrument, scheme)
    center = ls.beta2
    half = max(10.0 * ls.sigma / math.sqrt(n), 1e-3 * (1.0 + abs(center)))
    lo, hi = center - half, center + half
    m_lo, m_hi = _lad_moment(y_tilde, x, v, lo), _lad_moment(y_tilde, x, v, hi)
    widen = 0
    while m_lo * m_hi > 0.0 and widen < 6:
        half *= 10.0
        lo, hi = center - half, center + half
        m_lo, m_hi = _lad_moment(y_tilde, x, v, lo), _lad_moment(y_tilde, x, v, hi)
        widen += 1
    if m_lo * m_hi > 0.0:
        raise NumericalError(
            f"LAD moment has no root in range for target {target} "
            f"(bracket half-width {half:.3g})"
        )

    tol = 1e-3 / math.sqrt(n)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        m_mid = _lad_moment(y_tilde, x, v, mid)
        if m_mid == 0.0:
            # step past the flat stretch of the piecewise-constant moment
            if m_lo != 0.0:
                hi = mid
            else:
                lo = mid
        elif (m_mid > 0.0) == (m_lo > 0.0):
            lo, m_lo = mid, m_mid
        else:
            hi, m_hi = mid, m_mid
    beta2 = 0.5 * (lo + hi)

    resid = y_tilde - x * beta2
    f0 = _silverman_density_at_zero(resid, density_bandwidth_factor)
    if f0 <= 0.0:
        raise NumericalError(f"degenerate residual density for target {target}")
    phi = -f0 * float(np.mean(v * x))
    score = (0.5 - (y_tilde <= x * beta2)) * v
    omega, sigma, floored, zeta = _studentize(score, phi, scheme)
    return DebiasedEstimate(
        target=(j, k),
        method="lad-iv",
        beta2=float(beta2),
        phi=phi,
        omega=omega,
        sigma=sigma,
        score_series=score,
        zeta_series=zeta,
        beta1=beta1,
        instrument=instrument,
        omega_floored=floored,
        diagnostics={
            "density_at_zero": f0,
            "bracket_widenings": widen,
            "score_mean": float(score.mean()),
            "ls_iv_start": center,
        },
    )


def double_selection_estimate(
    data: PanelDataset,
    target: tuple[int, int],
    union_support: np.ndarray,
    variant: str,
    scheme: BlockScheme,
    density_bandwidth_factor: float = 1.06,
) -> DebiasedEstimate:
    """Unpenalized refit on the target column plus the union of supports.

    ``union_support`` holds covariate positions (excluding the target); the
    studentization projects the target column off those covariates so the
    usual score-based inference applies unchanged.
    """
    if variant not in ("ls", "lad"):
        raise ConfigurationError(f"unknown double selection variant '{variant}'")
    j, k = target
    y, x, Z, others = _split_design(data, target)
    union = np.asarray(sorted(set(int(u) for u in union_support)), dtype=int)
    if k in union:
        raise ConfigurationError("union support must not contain the target position")
    if union.size + 1 >= y.shape[0]:
        raise ConfigurationError(
            f"union support of size {union.size} leaves no degrees of freedom"
        )
    pos_in_others = np.searchsorted(others, union)
    W = Z[:, pos_in_others] if union.size else np.empty((y.shape[0], 0))
    A = np.column_stack([x, W])

    diagnostics: dict = {"union_size": int(union.size)}
    rank_flag = False
    if variant == "ls":
        coefs, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
        rank_flag = rank < A.shape[1]
    else:
        coefs = lad_regression(y, A)
        rank_flag = union.size and np.linalg.matrix_rank(A) < A.shape[1]
    if rank_flag:
        diagnostics["rank_deficient"] = True
    beta2 = float(coefs[0])
    fitted = A @ coefs
    resid = y - fitted

    # residualize the target column off the union support for the score
    if union.size:
        proj, _, _, _ = np.linalg.lstsq(W, x, rcond=None)
        v_ds = x - W @ proj
    else:
        v_ds = x.copy()
    if _sd(v_ds) == 0.0:
        raise NumericalError(f"target column lies in the union span for {target}")

    n = y.shape[0]
    if variant == "ls":
        phi = -float(v_ds @ x) / n
        score = resid * v_ds
        method = "double-ls"
    else:
        f0 = _silverman_density_at_zero(resid, density_bandwidth_factor)
        if f0 <= 0.0:
            raise NumericalError(f"degenerate residual density for target {target}")
        phi = -f0 * float(np.mean(v_ds * x))
        score = (0.5 - (y <= fitted)) * v_ds
        method = "double-lad"
        diagnostics["density_at_zero"] = f0
    if phi == 0.0:
        raise NumericalError(f"zero score derivative for target {target}")
    omega, sigma, floored, zeta = _studentize(score, phi, scheme)
    diagnostics["score_mean"] = float(score.mean())
    return DebiasedEstimate(
        target=(j, k),
        method=method,
        beta2=beta2,
        phi=phi,
        omega=omega,
        sigma=sigma,
        score_series=score,
        zeta_series=zeta,
        beta1=None,
        instrument=None,
        omega_floored=floored,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def _instrument_lambda(
    data: PanelDataset,
    targets: TargetSet,
    stage1: dict,
    plan: PenaltyPlan,
    config: DebiasConfig,
) -> float:
    """Penalty level for the instrument regressions, per configured policy."""
    tc = config.tune
    if config.instrument_penalty == "reuse":
        return float(plan.lam_joint)
    if config.instrument_penalty == "gaussian":
        total = sum(
            data.equation_specs[j].n_covariates - 1 for j, _ in targets
        )
        return lambda_gaussian_canonical(tc.alpha, tc.c, data.n, total, 1)
    # joint multiplier bootstrap over the instrument system
    scheme = BlockScheme(tc.block_size)
    sums = []
    for t in targets:
        x, Z, others, pilot, v0, refined = stage1[t]
        if refined is None:
            continue
        scores = Z * v0[:, None]
        sums.append(scheme.block_sums(scores) / refined[None, :])
    if not sums:
        return float(plan.lam_joint)
    eq_max = _multiplier_max_stats(
        sums, data.n, tc.draws, int(tc.seed) + _STREAM_INSTRUMENT
    )
    q = order_statistic_quantile(eq_max.max(axis=1), tc.alpha)
    return float(2.0 * tc.c * math.sqrt(data.n) * q)


def run_algorithm(
    data: PanelDataset,
    targets: TargetSet,
    method: str,
    config: DebiasConfig | None = None,
    plan: PenaltyPlan | None = None,
    s1_fits: dict[int, tuple[LassoFit, LassoFit]] | None = None,
) -> list[DebiasedEstimate]:
    """Full de-biasing pipeline over a target set.

    Shared work is computed once: the tuning plan, one equation-level fit per
    distinct equation, and one instrument fit per target.  ``s1_fits`` maps an
    equation to its (selection fit, coefficient fit) pair when precomputed.
    """
    if method not in _METHODS:
        raise ConfigurationError(f"unknown method '{method}' (choose from {_METHODS})")
    cfg = config or DebiasConfig()
    targets = targets if isinstance(targets, TargetSet) else TargetSet(tuple(targets))
    targets.validate(data)
    for j, _ in targets:
        if data.equation_specs[j].n_covariates < 2:
            raise ConfigurationError(f"equation {j} needs at least 2 covariates")

    if plan is None:
        plan, _ = run_pilot_then_tune(data, cfg.tune)
    if plan.lam_joint is None:
        raise ConfigurationError("de-biasing requires a plan with a joint penalty level")

    # one selection + coefficient fit per distinct equation
    equations = sorted({j for j, _ in targets})
    fits: dict[int, tuple[LassoFit, LassoFit]] = dict(s1_fits or {})
    for j in equations:
        if j in fits:
            continue
        y, X = data.estimation_design(j)
        lam_j = (
            float(np.asarray(plan.lam_by_equation)[j])
            if plan.scope == "per-equation" and plan.lam_by_equation is not None
            else float(plan.lam_joint)
        )
        problem = LassoProblem(
            equation=j, y=y, X=X, lam=lam_j, loadings=plan.loadings.values[j]
        )
        selection = solve_lasso(problem, cfg.tune.solver)
        coef_fit = post_lasso_ols(selection, problem) if cfg.post_lasso else selection
        fits[j] = (selection, coef_fit)

    hac = HacOptions(cfg.tune.bandwidth)
    scheme = BlockScheme(cfg.tune.block_size)

    stage1 = {
        t: _instrument_stage1(data, t, float(plan.lam_joint), hac, cfg.tune.solver)
        for t in targets
    }
    lam_instr = _instrument_lambda(data, targets, stage1, plan, cfg)
    instruments = {
        t: _instrument_final(
            data, t, stage1[t][0], stage1[t][1], stage1[t][2], stage1[t][5],
            lam_instr, cfg.tune.solver, cfg.post_lasso,
        )
        for t in targets
    }

    estimates: list[DebiasedEstimate] = []
    for t in targets:
        j, k = t
        selection, coef_fit = fits[j]
        beta1 = coef_fit.coef
        if method == "ls-iv":
            est = ls_iv_estimate(data, t, beta1, instruments[t], scheme)
        elif method == "lad-iv":
            est = lad_iv_estimate(
                data, t, beta1, instruments[t], scheme, cfg.density_bandwidth_factor
            )
        else:
            union = sorted(
                (set(selection.coef.support.tolist()) - {k})
                | set(int(u) for u in instruments[t].support)
            )
            est = double_selection_estimate(
                data, t, np.asarray(union, dtype=int),
                "ls" if method == "double-ls" else "lad",
                scheme, cfg.density_bandwidth_factor,
            )
        estimates.append(est)
    return estimates
