"""Long-run variance machinery.

Two estimators are used throughout the package: a Bartlett-kernel (Newey-West)
estimator for penalty loadings, and a non-overlapping block-sum estimator for
score variances and long-run covariance matrices.  Both center the input by
its full-sample mean, so they are invariant under constant shifts, and both
use divisor ``n`` autocovariances so the Bartlett aggregate stays
PSD-compatible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_model import PanelDataset
from .errors import ConfigurationError, DataError

__all__ = [
    "HacOptions",
    "BlockScheme",
    "LoadingMatrix",
    "default_bandwidth",
    "newey_west_lvar",
    "compute_loadings",
    "loadings_for_design",
    "loadings_block_sum",
    "block_sum_lrcov",
    "omega_jk",
]

#: Relative size of the variance floor applied to loadings and score variances.
FLOOR_RATIO = 1e-12


def default_bandwidth(n: int) -> int:
    """Automatic Bartlett bandwidth floor(4 * (n/100)^(2/9))."""
    return int(math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


@dataclass(frozen=True)
class HacOptions:
    """Bartlett-kernel estimator controls; ``bandwidth=None`` selects the
    automatic rule at call time."""

    bandwidth: int | None = None

    def resolve(self, n: int) -> int:
        p = default_bandwidth(n) if self.bandwidth is None else int(self.bandwidth)
        if p < 0:
            raise ConfigurationError(f"bandwidth must be >= 0, got {p}")
        if p >= n:
            raise ConfigurationError(f"bandwidth {p} must be < n = {n}")
        return p


@dataclass(frozen=True)
class BlockScheme:
    """Non-overlapping blocking of a length-n sample into ``floor(n/b)``
    blocks of size ``b``; trailing observations are dropped."""

    block_size: int

    def __post_init__(self) -> None:
        if int(self.block_size) < 1:
            raise ConfigurationError(f"block size must be >= 1, got {self.block_size}")
        object.__setattr__(self, "block_size", int(self.block_size))

    def block_count(self, n: int) -> int:
        if self.block_size > n:
            raise ConfigurationError(f"block size {self.block_size} exceeds n = {n}")
        return n // self.block_size

    def used(self, n: int) -> int:
        return self.block_count(n) * self.block_size

    def block_sums(self, series: np.ndarray) -> np.ndarray:
        """Within-block sums; accepts (n,) or (n, m) input."""
        x = np.asarray(series, dtype=np.float64)
        n = x.shape[0]
        l_n = self.block_count(n)
        trimmed = x[: l_n * self.block_size]
        if x.ndim == 1:
            return trimmed.reshape(l_n, self.block_size).sum(axis=1)
        return trimmed.reshape(l_n, self.block_size, x.shape[1]).sum(axis=1)


@dataclass
class LoadingMatrix:
    """Per-equation penalty loadings (ragged over equations).

    Entries are long-run standard deviations of the per-coordinate score
    series, floored away from zero; ``floor_flags`` marks floored entries.
    """

    values: list[np.ndarray]
    floor_flags: list[np.ndarray]

    @property
    def n_equations(self) -> int:
        return len(self.values)

    def any_floored(self) -> bool:
        return any(bool(f.any()) for f in self.floor_flags)

    def max_value(self) -> float:
        return float(max(v.max() for v in self.values))


def _autocovariances(u: np.ndarray, max_lag: int) -> np.ndarray:
    """Divisor-n autocovariances about the sample mean, lags 0..max_lag.

    ``u`` may be (n,) for one series or (n, m) for m series computed at once;
    the result has shape (max_lag+1,) or (max_lag+1, m).
    """
    u = np.asarray(u, dtype=np.float64)
    n = u.shape[0]
    c = u - u.mean(axis=0)
    out = np.empty((max_lag + 1,) + c.shape[1:])
    for lag in range(max_lag + 1):
        out[lag] = np.sum(c[lag:] * c[: n - lag], axis=0) / n
    return out


def _newey_west_many(u: np.ndarray, bandwidth: int) -> np.ndarray:
    gammas = _autocovariances(u, bandwidth)
    weights = 1.0 - np.arange(bandwidth + 1) / (bandwidth + 1.0)
    weights[0] = 0.5  # lag 0 counted once in the symmetric sum below
    return 2.0 * np.tensordot(weights, gammas, axes=(0, 0))


def newey_west_lvar(series: np.ndarray, opts: HacOptions | None = None) -> float:
    """Bartlett-kernel long-run variance of a scalar series.

    Lag-``l`` autocovariances receive weight ``1 - |l|/(p+1)`` for bandwidth
    ``p``; bandwidth 0 gives back the plain sample variance.  The estimate can
    be slightly negative in small samples; callers clip before taking roots.
    """
    u = np.asarray(series, dtype=np.float64)
    if u.ndim != 1:
        raise ConfigurationError("newey_west_lvar expects a 1-D series")
    if not np.all(np.isfinite(u)):
        raise DataError("non-finite values in series")
    p = (opts or HacOptions()).resolve(u.shape[0])
    return float(_newey_west_many(u, p))


def _floor_values(raw: list[np.ndarray]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Clip negatives, then floor at FLOOR_RATIO times the largest estimate."""
    clipped = [np.maximum(v, 0.0) for v in raw]
    top = max((float(v.max()) for v in clipped if v.size), default=0.0)
    base = top if top > 0.0 else 1.0
    floor = FLOOR_RATIO * base
    out, flags = [], []
    for v in clipped:
        flags.append(v < floor)
        out.append(np.maximum(v, floor))
    return out, flags


def loadings_for_design(
    X: np.ndarray, residuals: np.ndarray, opts: HacOptions | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Loadings sqrt(lvar(x_k * eps)) for one design matrix.

    Returns the floored loading vector and the floor flags.
    """
    X = np.asarray(X, dtype=np.float64)
    eps = np.asarray(residuals, dtype=np.float64)
    if X.shape[0] != eps.shape[0]:
        raise ConfigurationError("residual length does not match design rows")
    p = (opts or HacOptions()).resolve(X.shape[0])
    lvars = _newey_west_many(X * eps[:, None], p)
    floored, flags = _floor_values([lvars])
    return np.sqrt(floored[0]), flags[0]


def compute_loadings(
    data: PanelDataset,
    residuals: list[np.ndarray],
    opts: HacOptions | None = None,
) -> LoadingMatrix:
    """Penalty loadings for every equation from its residual series.

    Scores are formed with the estimation design (centered when the equation
    has an intercept).  The floor is global across all (equation, coordinate)
    pairs so relative scales are preserved.
    """
    if len(residuals) != data.n_equations:
        raise ConfigurationError(
            f"expected {data.n_equations} residual vectors, got {len(residuals)}"
        )
    raw: list[np.ndarray] = []
    p = (opts or HacOptions()).resolve(data.n)
    for j in range(data.n_equations):
        eps = np.asarray(residuals[j], dtype=np.float64)
        if eps.shape != (data.n,):
            raise ConfigurationError(f"equation {j}: residual length != n")
        X = data.design(j, centered=data.equation_specs[j].intercept)
        raw.append(_newey_west_many(X * eps[:, None], p))
    floored, flags = _floor_values(raw)
    return LoadingMatrix(values=[np.sqrt(v) for v in floored], floor_flags=flags)


def loadings_block_sum(
    data: PanelDataset,
    residuals: list[np.ndarray],
    scheme: "BlockScheme",
) -> LoadingMatrix:
    """Penalty loadings from the block-sum variance estimator.

    Same contract as :func:`compute_loadings` but the long-run variance of
    each score series comes from non-overlapping block sums at the given
    block size, so the loadings and the multiplier bootstrap share one
    blocking scheme.
    """
    if len(residuals) != data.n_equations:
        raise ConfigurationError(
            f"expected {data.n_equations} residual vectors, got {len(residuals)}"
        )
    l_n = scheme.block_count(data.n)
    raw: list[np.ndarray] = []
    for j in range(data.n_equations):
        eps = np.asarray(residuals[j], dtype=np.float64)
        if eps.shape != (data.n,):
            raise ConfigurationError(f"equation {j}: residual length != n")
        X = data.design(j, centered=data.equation_specs[j].intercept)
        scores = X * eps[:, None]
        sums = scheme.block_sums(scores - scores.mean(axis=0))
        raw.append(np.sum(sums * sums, axis=0) / (scheme.block_size * l_n))
    floored, flags = _floor_values(raw)
    return LoadingMatrix(values=[np.sqrt(v) for v in floored], floor_flags=flags)


def block_sum_lrcov(vectors: np.ndarray, scheme: BlockScheme) -> np.ndarray:
    """Long-run covariance from outer products of within-block sums.

    Input is an ``n x m`` matrix of score components; the result is the exact
    symmetric PSD matrix  (1/(b*l)) * sum_i s_i s_i'  with ``s_i`` the i-th
    block sum of the centered columns.
    """
    V = np.asarray(vectors, dtype=np.float64)
    if V.ndim == 1:
        V = V[:, None]
    if V.ndim != 2 or V.shape[1] < 1:
        raise ConfigurationError("expected an (n, m) array of score components")
    n = V.shape[0]
    l_n = scheme.block_count(n)
    centered = V - V.mean(axis=0)
    sums = scheme.block_sums(centered)
    M = sums.T @ sums / (scheme.block_size * l_n)
    return (M + M.T) / 2.0


def omega_jk(scores: np.ndarray, scheme: BlockScheme) -> tuple[float, bool]:
    """Scalar block-sum long-run variance of a score series, floored.

    Returns ``(value, floored)``; a zero or negative raw estimate is replaced
    by the floor and flagged.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ConfigurationError("omega_jk expects a 1-D score series")
    raw = float(block_sum_lrcov(s, scheme)[0, 0])
    base = raw if raw > 0.0 else 1.0
    floor = FLOOR_RATIO * base
    if raw < floor:
        return floor, True
    return raw, False
