"""Core data structures for systems of regression equations.

A :class:`PanelDataset` holds time-indexed observations of ``J`` response
series together with a shared pool of candidate regressors; each equation
selects its own (possibly different) subset of pool columns through an
:class:`EquationSpec`.  Datasets are immutable after construction and safe to
share across worker processes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError

__all__ = [
    "EquationSpec",
    "PanelDataset",
    "TargetSet",
    "CoefVector",
    "prediction_norm",
    "euclidean_norm",
    "load_panel_csv",
    "save_panel_csv",
]


@dataclass(frozen=True)
class EquationSpec:
    """Configuration of one regression equation.

    Parameters
    ----------
    response_index : int
        Column of the response matrix holding this equation's dependent
        variable.
    covariate_indices : tuple of int
        Ordered pool columns used as regressors (length ``K_j``).
    intercept : bool
        If true, an unpenalized constant is handled by centering the response
        and the design before estimation and recovering the constant post-fit.
    response_pool_index : int or None
        Pool column holding the same series as the response, when the response
        lives in the regressor pool (e.g. autoregressions).  Used to reject
        self-regression on the contemporaneous response.
    """

    response_index: int
    covariate_indices: tuple[int, ...]
    intercept: bool = False
    response_pool_index: int | None = None

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.covariate_indices)
        object.__setattr__(self, "covariate_indices", idx)
        if len(set(idx)) != len(idx):
            raise ConfigurationError(
                f"equation {self.response_index}: duplicate covariate indices {idx}"
            )
        if any(i < 0 for i in idx):
            raise ConfigurationError(
                f"equation {self.response_index}: negative covariate index"
            )
        if self.response_pool_index is not None and self.response_pool_index in idx:
            raise ConfigurationError(
                f"equation {self.response_index}: response column used as its own "
                "contemporaneous covariate"
            )

    @property
    def n_covariates(self) -> int:
        return len(self.covariate_indices)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PanelDataset:
    """Immutable container for an equation system's observations.

    ``responses`` is ``n x J`` and ``covariate_pool`` is ``n x P``; every
    equation spec references pool columns by index.
    """

    responses: np.ndarray
    covariate_pool: np.ndarray
    equation_specs: tuple[EquationSpec, ...]
    response_names: tuple[str, ...] | None = None
    pool_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        resp = np.atleast_2d(np.asarray(self.responses, dtype=np.float64))
        pool = np.atleast_2d(np.asarray(self.covariate_pool, dtype=np.float64))
        if resp.ndim != 2 or pool.ndim != 2:
            raise ConfigurationError("responses and covariate_pool must be 2-D")
        if resp.shape[0] != pool.shape[0]:
            raise ConfigurationError(
                f"row mismatch: {resp.shape[0]} response rows vs "
                f"{pool.shape[0]} pool rows"
            )
        if resp.shape[0] < 4:
            raise ConfigurationError(f"need at least 4 observations, got {resp.shape[0]}")
        if not np.all(np.isfinite(resp)):
            raise DataError("responses contain non-finite entries")
        if not np.all(np.isfinite(pool)):
            raise DataError("covariate pool contains non-finite entries")
        specs = tuple(self.equation_specs)
        if not specs:
            raise ConfigurationError("at least one equation spec is required")
        for spec in specs:
            if not 0 <= spec.response_index < resp.shape[1]:
                raise ConfigurationError(
                    f"response index {spec.response_index} out of range "
                    f"(J={resp.shape[1]})"
                )
            if spec.covariate_indices and max(spec.covariate_indices) >= pool.shape[1]:
                raise ConfigurationError(
                    f"equation {spec.response_index}: covariate index "
                    f"{max(spec.covariate_indices)} out of range (P={pool.shape[1]})"
                )
        object.__setattr__(self, "responses", _readonly(resp))
        object.__setattr__(self, "covariate_pool", _readonly(pool))
        object.__setattr__(self, "equation_specs", specs)

    @property
    def n(self) -> int:
        return self.responses.shape[0]

    @property
    def n_equations(self) -> int:
        return len(self.equation_specs)

    @property
    def pool_size(self) -> int:
        return self.covariate_pool.shape[1]

    def response(self, j: int, centered: bool = False) -> np.ndarray:
        """Response vector of equation ``j`` (a copy)."""
        y = self.responses[:, self.equation_specs[j].response_index].copy()
        if centered:
            y -= y.mean()
        return y

    def design(self, j: int, centered: bool = False) -> np.ndarray:
        """``n x K_j`` regressor matrix of equation ``j`` (a copy)."""
        X = self.covariate_pool[:, list(self.equation_specs[j].covariate_indices)].copy()
        if centered:
            X -= X.mean(axis=0)
        return X

    def estimation_design(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Response and design on the estimation scale (centered iff intercept)."""
        c = self.equation_specs[j].intercept
        return self.response(j, centered=c), self.design(j, centered=c)

    def covariate_label(self, j: int, k: int) -> str:
        pool_idx = self.equation_specs[j].covariate_indices[k]
        if self.pool_names is not None:
            return self.pool_names[pool_idx]
        return f"x{pool_idx}"


@dataclass(frozen=True)
class TargetSet:
    """Coefficients under inference, as ``(equation, position)`` pairs.

    The second element indexes the equation's covariate list, not the pool.
    """

    targets: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        t = tuple((int(j), int(k)) for j, k in self.targets)
        if len(set(t)) != len(t):
            raise ConfigurationError("duplicate inference targets")
        object.__setattr__(self, "targets", t)

    def validate(self, data: PanelDataset) -> None:
        for j, k in self.targets:
            if not 0 <= j < data.n_equations:
                raise ConfigurationError(f"target ({j},{k}): equation out of range")
            if not 0 <= k < data.equation_specs[j].n_covariates:
                raise ConfigurationError(
                    f"target ({j},{k}): covariate position out of range "
                    f"(K_j={data.equation_specs[j].n_covariates})"
                )

    def __len__(self) -> int:
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)


@dataclass(frozen=True)
class CoefVector:
    """Coefficient vector for one equation, aligned with its covariate list."""

    equation: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ConfigurationError("coefficient values must be 1-D")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def support(self) -> np.ndarray:
        """Sorted indices of exactly nonzero entries."""
        return np.flatnonzero(self.values != 0.0)

    def __len__(self) -> int:
        return len(self.values)


def prediction_norm(delta: CoefVector, data: PanelDataset) -> float:
    """Root mean square of ``X_j @ delta`` over the sample.

    Uses equation ``delta.equation``'s raw design columns.
    """
    j = delta.equation
    spec = data.equation_specs[j]
    if len(delta) != spec.n_covariates:
        raise ConfigurationError(
            f"coefficient length {len(delta)} does not match equation {j}'s "
            f"{spec.n_covariates} covariates"
        )
    fitted = data.design(j) @ delta.values
    return float(math.sqrt(np.mean(fitted * fitted)))


def euclidean_norm(delta: CoefVector) -> float:
    """Plain l2 norm of the coefficient values."""
    return float(np.linalg.norm(delta.values))


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _parse_cell(text: str, row: int, col_name: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(
            f"non-numeric cell at row {row}, column '{col_name}': {text!r}"
        ) from None
    if not math.isfinite(value):
        raise DataError(f"non-finite cell at row {row}, column '{col_name}'")
    return value


def _read_csv_columns(path: str) -> tuple[list[str], np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        rows: list[list[float]] = []
        for i, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise DataError(
                    f"{path}: ragged row {i}: expected {len(header)} cells, "
                    f"got {len(raw)}"
                )
            rows.append([_parse_cell(c, i, header[k]) for k, c in enumerate(raw)])
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=np.float64)


def load_panel_csv(path: str, schema: dict) -> PanelDataset:
    """Build a :class:`PanelDataset` from a CSV file and a schema config.

    The schema declares equations by column name, plus optional lag
    directives.  Lagged columns are materialized as new pool columns named
    ``<column>_lag<order>`` and the first ``max(order)`` rows are dropped.
    Pool column order is deterministic: CSV columns in file order, then lag
    columns in directive order.
    """
    header, values = _read_csv_columns(path)
    name_to_col = {name: i for i, name in enumerate(header)}

    lag_directives: list[tuple[str, int]] = []
    for entry in schema.get("lags", []):
        col = entry["column"]
        if col not in name_to_col:
            raise DataError(f"lag directive references unknown column '{col}'")
        for order in entry["orders"]:
            order = int(order)
            if order < 1:
                raise ConfigurationError(f"lag order must be >= 1, got {order}")
            lag_directives.append((col, order))

    max_lag = max((o for _, o in lag_directives), default=0)
    if max_lag >= values.shape[0]:
        raise DataError(
            f"lag order {max_lag} leaves no rows (file has {values.shape[0]})"
        )

    n = values.shape[0] - max_lag
    pool_cols = [values[max_lag:, name_to_col[name]] for name in header]
    pool_names = list(header)
    for col, order in lag_directives:
        lag_name = f"{col}_lag{order}"
        if lag_name in pool_names:
            raise ConfigurationError(f"duplicate lag column '{lag_name}'")
        base = values[:, name_to_col[col]]
        pool_cols.append(base[max_lag - order : values.shape[0] - order])
        pool_names.append(lag_name)
    pool = np.column_stack(pool_cols)
    pool_index = {name: i for i, name in enumerate(pool_names)}

    equations = schema.get("equations")
    if not equations:
        raise ConfigurationError("schema must declare at least one equation")
    specs: list[EquationSpec] = []
    responses: list[np.ndarray] = []
    response_names: list[str] = []
    for eq in equations:
        resp_name = eq["response"]
        if resp_name not in pool_index:
            raise DataError(f"unknown response column '{resp_name}'")
        cov_idx = []
        for cov in eq["covariates"]:
            if cov not in pool_index:
                raise DataError(f"unknown covariate column '{cov}'")
            cov_idx.append(pool_index[cov])
        specs.append(
            EquationSpec(
                response_index=len(responses),
                covariate_indices=tuple(cov_idx),
                intercept=bool(eq.get("intercept", False)),
                response_pool_index=pool_index[resp_name],
            )
        )
        responses.append(pool[:, pool_index[resp_name]])
        response_names.append(resp_name)

    return PanelDataset(
        responses=np.column_stack(responses),
        covariate_pool=pool,
        equation_specs=tuple(specs),
        response_names=tuple(response_names),
        pool_names=tuple(pool_names),
    )


def save_panel_csv(data: PanelDataset, path: str) -> None:
    """Write the covariate pool to CSV with round-trip-exact float formatting."""
    names = data.pool_names or tuple(f"x{i}" for i in range(data.pool_size))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in data.covariate_pool:
            writer.writerow([repr(float(v)) for v in row])
