"""Pivotal statistics, bootstrap critical values, and confidence reports.

The studentized pivot of each de-biased estimate is compared against critical
values simulated by a block multiplier bootstrap of its standardized score
series.  Per-target quantiles give individual intervals; the quantile of the
maximum over a target group gives a simultaneous region, and a step-down pass
over the same draws gives a multiple-testing procedure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .debias import DebiasedEstimate
from .errors import ConfigurationError
from .lrv import BlockScheme
from .penalty import order_statistic_quantile

__all__ = [
    "PivotalStats",
    "BootCriticalValues",
    "ConfidenceReport",
    "compute_pivots",
    "bootstrap_pivots",
    "build_report",
    "stepdown_multiple_test",
    "report_to_csv",
    "report_to_markdown",
]

_STREAM_PIVOT = 303
_CHUNK = 512


@dataclass
class PivotalStats:
    """Studentized statistics sqrt(n) (beta2 - b0) / sigma per target."""

    targets: list[tuple[int, int]]
    tstats: np.ndarray
    null_values: np.ndarray


@dataclass
class BootCriticalValues:
    """Bootstrap draws of the pivots and the derived critical values."""

    targets: list[tuple[int, int]]
    q_individual: np.ndarray
    q_joint: float
    alpha: float
    draws_matrix: np.ndarray = field(repr=False)
    block_size: int = 1
    seed: int = 0

    @property
    def draws(self) -> int:
        return self.draws_matrix.shape[0]

    def quantiles_at(self, alpha: float) -> tuple[np.ndarray, float]:
        """Recompute per-target and joint critical values at another level."""
        q_ind = np.array(
            [
                order_statistic_quantile(np.abs(self.draws_matrix[:, t]), alpha)
                for t in range(len(self.targets))
            ]
        )
        q_joint = order_statistic_quantile(
            np.abs(self.draws_matrix).max(axis=1), alpha
        )
        return q_ind, float(q_joint)


@dataclass
class ReportRow:
    target: tuple[int, int]
    estimate: float
    se: float
    tstat: float
    null_value: float
    q_individual: float
    q_joint: float
    ci_asy: tuple[float, float]
    ci_boot: tuple[float, float]
    ci_sim: tuple[float, float]
    reject_asy: bool
    reject_boot: bool
    reject_sim: bool


@dataclass
class ConfidenceReport:
    """Per-target intervals plus the joint-null decision."""

    rows: list[ReportRow]
    alpha: float
    joint_reject: bool
    max_abs_tstat: float
    q_joint: float
    metadata: dict = field(default_factory=dict)


def compute_pivots(
    estimates: list[DebiasedEstimate], null_values: np.ndarray | None = None
) -> PivotalStats:
    """Studentized pivots for a list of estimates (default nulls: zero)."""
    if not estimates:
        raise ConfigurationError("no estimates to compute pivots from")
    n = estimates[0].zeta_series.shape[0]
    b0 = (
        np.zeros(len(estimates))
        if null_values is None
        else np.asarray(null_values, dtype=np.float64)
    )
    if b0.shape != (len(estimates),):
        raise ConfigurationError("null values length does not match estimates")
    t = np.array(
        [
            math.sqrt(n) * (e.beta2 - b0[i]) / e.sigma
            for i, e in enumerate(estimates)
        ]
    )
    if not np.all(np.isfinite(t)):
        raise ConfigurationError("non-finite pivotal statistic")
    return PivotalStats(
        targets=[e.target for e in estimates], tstats=t, null_values=b0
    )


def bootstrap_pivots(
    estimates: list[DebiasedEstimate],
    scheme: BlockScheme,
    draws: int,
    seed: int,
    alpha: float = 0.05,
) -> BootCriticalValues:
    """Block multiplier bootstrap of the pivots.

    One N(0,1) multiplier is drawn per (equation, block) and shared by all
    targets within that equation, preserving their dependence; equations get
    independent multipliers.  All randomness comes from a single deterministic
    counter-based stream.
    """
    if not estimates:
        raise ConfigurationError("no estimates to bootstrap")
    n = estimates[0].zeta_series.shape[0]
    for e in estimates:
        if e.zeta_series.shape[0] != n:
            raise ConfigurationError("estimates have mismatched series lengths")
    l_n = scheme.block_count(n)
    if l_n < 2:
        raise ConfigurationError(
            f"block scheme leaves fewer than 2 blocks (b={scheme.block_size}, n={n})"
        )
    targets = [e.target for e in estimates]
    equations = sorted({j for j, _ in targets})
    eq_row = {j: i for i, j in enumerate(equations)}
    zsums = np.stack([scheme.block_sums(e.zeta_series) for e in estimates])
    rows = np.array([eq_row[j] for j, _ in targets])

    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence((seed, _STREAM_PIVOT)))
    )
    T = len(targets)
    out = np.empty((draws, T))
    scale = 1.0 / math.sqrt(n)
    done = 0
    while done < draws:
        m = min(_CHUNK, draws - done)
        E = rng.standard_normal((m, len(equations), l_n))
        # T*[b, t] = scale * sum_i E[b, eq(t), i] * zsums[t, i]
        out[done : done + m] = scale * np.einsum(
            "bti,ti->bt", E[:, rows, :], zsums, optimize=True
        )
        done += m
    q_ind = np.array(
        [order_statistic_quantile(np.abs(out[:, t]), alpha) for t in range(T)]
    )
    q_joint = order_statistic_quantile(np.abs(out).max(axis=1), alpha)
    return BootCriticalValues(
        targets=targets,
        q_individual=q_ind,
        q_joint=float(q_joint),
        alpha=alpha,
        draws_matrix=out,
        block_size=scheme.block_size,
        seed=seed,
    )


def build_report(
    estimates: list[DebiasedEstimate],
    crit: BootCriticalValues,
    alpha: float,
    null_values: np.ndarray | None = None,
) -> ConfidenceReport:
    """Assemble the three interval families and rejection decisions."""
    if [e.target for e in estimates] != crit.targets:
        raise ConfigurationError("estimates and critical values target sets differ")
    pivots = compute_pivots(estimates, null_values)
    if alpha == crit.alpha:
        q_ind, q_joint = crit.q_individual, crit.q_joint
    else:
        q_ind, q_joint = crit.quantiles_at(alpha)
    z = float(norm.ppf(1.0 - alpha / 2.0))
    n = estimates[0].zeta_series.shape[0]
    root_n = math.sqrt(n)

    rows: list[ReportRow] = []
    for i, e in enumerate(estimates):
        hw_asy = e.sigma * z / root_n
        hw_boot = e.sigma * q_ind[i] / root_n
        hw_sim = e.sigma * q_joint / root_n
        t = float(pivots.tstats[i])
        rows.append(
            ReportRow(
                target=e.target,
                estimate=e.beta2,
                se=e.sigma / root_n,
                tstat=t,
                null_value=float(pivots.null_values[i]),
                q_individual=float(q_ind[i]),
                q_joint=float(q_joint),
                ci_asy=(e.beta2 - hw_asy, e.beta2 + hw_asy),
                ci_boot=(e.beta2 - hw_boot, e.beta2 + hw_boot),
                ci_sim=(e.beta2 - hw_sim, e.beta2 + hw_sim),
                reject_asy=abs(t) > z,
                reject_boot=abs(t) > q_ind[i],
                reject_sim=abs(t) > q_joint,
            )
        )
    max_abs_t = float(np.max(np.abs(pivots.tstats)))
    return ConfidenceReport(
        rows=rows,
        alpha=alpha,
        joint_reject=bool(max_abs_t > q_joint),
        max_abs_tstat=max_abs_t,
        q_joint=float(q_joint),
        metadata={
            "draws": crit.draws,
            "block_size": crit.block_size,
            "seed": crit.seed,
            "n": n,
        },
    )


def stepdown_multiple_test(
    estimates: list[DebiasedEstimate],
    crit: BootCriticalValues,
    alpha: float,
    null_values: np.ndarray | None = None,
) -> list[tuple[int, int]]:
    """Step-down multiple testing over the target set.

    Iteratively rejects targets whose |pivot| exceeds the bootstrap quantile
    of the maximum over the not-yet-rejected set, recomputing the quantile
    after each round.  The result always contains the single-step rejections.
    """
    pivots = compute_pivots(estimates, null_values)
    abs_t = np.abs(pivots.tstats)
    abs_draws = np.abs(crit.draws_matrix)
    remaining = np.ones(len(estimates), dtype=bool)
    rejected = np.zeros(len(estimates), dtype=bool)
    while remaining.any():
        q = order_statistic_quantile(abs_draws[:, remaining].max(axis=1), alpha)
        new = remaining & (abs_t > q)
        if not new.any():
            break
        rejected |= new
        remaining &= ~new
    return [crit.targets[i] for i in np.flatnonzero(rejected)]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_CSV_COLUMNS = [
    "equation",
    "covariate",
    "estimate",
    "se",
    "tstat",
    "null_value",
    "q_individual",
    "q_joint",
    "ci_asy_lo",
    "ci_asy_hi",
    "ci_boot_lo",
    "ci_boot_hi",
    "ci_sim_lo",
    "ci_sim_hi",
    "reject_asy",
    "reject_boot",
    "reject_sim",
]


def report_to_csv(report: ConfidenceReport) -> str:
    """Machine-readable report: one row per target, 17 significant digits."""
    lines = [",".join(_CSV_COLUMNS)]
    for r in report.rows:
        vals = [
            str(r.target[0]),
            str(r.target[1]),
            repr(r.estimate),
            repr(r.se),
            repr(r.tstat),
            repr(r.null_value),
            repr(r.q_individual),
            repr(r.q_joint),
            repr(r.ci_asy[0]),
            repr(r.ci_asy[1]),
            repr(r.ci_boot[0]),
            repr(r.ci_boot[1]),
            repr(r.ci_sim[0]),
            repr(r.ci_sim[1]),
            str(int(r.reject_asy)),
            str(int(r.reject_boot)),
            str(int(r.reject_sim)),
        ]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def report_to_markdown(report: ConfidenceReport) -> str:
    """Human-readable table with 4 significant digits."""
    head = (
        "| target | estimate | se | t | CI asym | CI boot | CI simult | reject |\n"
        "|---|---|---|---|---|---|---|---|\n"
    )
    body = []
    for r in report.rows:
        flags = "".join(
            c if f else "-"
            for c, f in zip("abs", (r.reject_asy, r.reject_boot, r.reject_sim))
        )
        body.append(
            f"| ({r.target[0]},{r.target[1]}) | {r.estimate:.4g} | {r.se:.4g} "
            f"| {r.tstat:.4g} | [{r.ci_asy[0]:.4g}, {r.ci_asy[1]:.4g}] "
            f"| [{r.ci_boot[0]:.4g}, {r.ci_boot[1]:.4g}] "
            f"| [{r.ci_sim[0]:.4g}, {r.ci_sim[1]:.4g}] | {flags} |"
        )
    tail = (
        f"\njoint null {'rejected' if report.joint_reject else 'not rejected'} "
        f"at level {report.alpha:.4g} "
        f"(max |t| = {report.max_abs_tstat:.4g}, critical value {report.q_joint:.4g})\n"
    )
    return head + "\n".join(body) + tail
