import math

import numpy as np
import pytest

from srelasso.data_model import (
    CoefVector,
    EquationSpec,
    PanelDataset,
    TargetSet,
    euclidean_norm,
    load_panel_csv,
    prediction_norm,
    save_panel_csv,
)
from srelasso.errors import ConfigurationError, DataError


def make_data(n=10, J=2, P=4, seed=0, intercept=False):
    rng = np.random.default_rng(seed)
    pool = rng.standard_normal((n, P))
    resp = rng.standard_normal((n, J))
    specs = tuple(
        EquationSpec(response_index=j, covariate_indices=tuple(range(P)), intercept=intercept)
        for j in range(J)
    )
    return PanelDataset(responses=resp, covariate_pool=pool, equation_specs=specs)


class TestPredictionNorm:
    def test_zero_vector(self):
        data = make_data()
        assert prediction_norm(CoefVector(equation=0, values=np.zeros(4)), data) == 0.0

    def test_constant_design(self):
        data = PanelDataset(
            responses=np.zeros((5, 1)),
            covariate_pool=np.ones((5, 1)),
            equation_specs=(EquationSpec(response_index=0, covariate_indices=(0,)),),
        )
        for c in (-2.5, 0.3, 7.0):
            got = prediction_norm(CoefVector(equation=0, values=np.array([c])), data)
            assert got == pytest.approx(abs(c), abs=1e-14)

    def test_small_arithmetic_case(self):
        # column (1,2,3) with unit coefficient: sqrt((1+4+9)/3)
        data = PanelDataset(
            responses=np.zeros((4, 1)),
            covariate_pool=np.array([[1.0], [2.0], [3.0], [0.0]]),
            equation_specs=(EquationSpec(response_index=0, covariate_indices=(0,)),),
        )
        # use only first 3 rows via a dedicated dataset
        data3 = PanelDataset(
            responses=np.zeros((4, 1)),
            covariate_pool=np.array([[1.0], [2.0], [3.0], [0.0]]),
            equation_specs=data.equation_specs,
        )
        # n=3 case computed directly
        x = np.array([1.0, 2.0, 3.0])
        expected = math.sqrt(np.mean(x**2))
        assert expected == pytest.approx(math.sqrt(14.0 / 3.0), rel=1e-15)
        got = prediction_norm(CoefVector(equation=0, values=np.array([1.0])), data3)
        assert got == pytest.approx(math.sqrt((1 + 4 + 9 + 0) / 4.0), rel=1e-14)

    def test_matches_bruteforce_loop(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            n = int(rng.integers(4, 21))
            K = int(rng.integers(1, 6))
            pool = rng.standard_normal((n, K))
            data = PanelDataset(
                responses=np.zeros((n, 1)),
                covariate_pool=pool,
                equation_specs=(
                    EquationSpec(response_index=0, covariate_indices=tuple(range(K))),
                ),
            )
            delta = rng.standard_normal(K)
            acc = 0.0
            for t in range(n):
                fit = 0.0
                for k in range(K):
                    fit += pool[t, k] * delta[k]
                acc += fit * fit
            expected = math.sqrt(acc / n)
            got = prediction_norm(CoefVector(equation=0, values=delta), data)
            assert got == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch(self):
        data = make_data()
        with pytest.raises(ConfigurationError):
            prediction_norm(CoefVector(equation=0, values=np.zeros(3)), data)


class TestEuclideanNorm:
    def test_zero(self):
        assert euclidean_norm(CoefVector(equation=0, values=np.zeros(3))) == 0.0

    def test_pythagorean(self):
        assert euclidean_norm(CoefVector(equation=0, values=np.array([3.0, 4.0]))) == 5.0

    def test_ones(self):
        assert euclidean_norm(CoefVector(equation=0, values=np.ones(4))) == 2.0


class TestInvariants:
    def test_min_observations(self):
        with pytest.raises(ConfigurationError, match="at least 4"):
            make_data(n=3)

    def test_nan_rejected(self):
        pool = np.ones((5, 2))
        pool[2, 1] = np.nan
        with pytest.raises(DataError):
            PanelDataset(
                responses=np.zeros((5, 1)),
                covariate_pool=pool,
                equation_specs=(EquationSpec(response_index=0, covariate_indices=(0, 1)),),
            )

    def test_covariate_index_out_of_range(self):
        with pytest.raises(ConfigurationError, match="out of range"):
            PanelDataset(
                responses=np.zeros((5, 1)),
                covariate_pool=np.ones((5, 2)),
                equation_specs=(EquationSpec(response_index=0, covariate_indices=(0, 5)),),
            )

    def test_duplicate_covariates_rejected(self):
        with pytest.raises(ConfigurationError, match="duplicate"):
            EquationSpec(response_index=0, covariate_indices=(1, 1))

    def test_self_regression_rejected(self):
        with pytest.raises(ConfigurationError, match="own"):
            EquationSpec(response_index=0, covariate_indices=(0, 1), response_pool_index=0)

    def test_immutability(self):
        data = make_data()
        with pytest.raises(ValueError):
            data.covariate_pool[0, 0] = 99.0

    def test_coef_support_exact(self):
        v = CoefVector(equation=0, values=np.array([0.0, 1e-300, 0.0, -2.0]))
        assert v.support.tolist() == [1, 3]

    def test_target_set_validation(self):
        data = make_data()
        ts = TargetSet(((0, 0), (1, 3)))
        ts.validate(data)
        with pytest.raises(ConfigurationError):
            TargetSet(((0, 0), (0, 0)))
        bad = TargetSet(((0, 4),))
        with pytest.raises(ConfigurationError):
            bad.validate(data)


class TestCsvIngestion:
    def write(self, tmp_path, text, name="panel.csv"):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return str(p)

    def test_basic_load(self, tmp_path):
        path = self.write(tmp_path, "y,x\n1,2\n3,4\n5,6\n7,8\n9,10\n")
        data = load_panel_csv(
            path, {"equations": [{"response": "y", "covariates": ["x"]}]}
        )
        assert data.n == 5
        assert data.pool_size == 2

    def test_lag_costs_one_row(self, tmp_path):
        path = self.write(tmp_path, "y,x\n1,2\n3,4\n5,6\n7,8\n9,10\n")
        data = load_panel_csv(
            path,
            {
                "lags": [{"column": "x", "orders": [1]}],
                "equations": [{"response": "y", "covariates": ["x_lag1"]}],
            },
        )
        assert data.n == 4
        assert data.pool_size == 3
        # the lag column really is the shifted series
        lag_col = data.covariate_pool[:, 2]
        np.testing.assert_allclose(lag_col, [2.0, 4.0, 6.0, 8.0])

    def test_duplicate_covariate_rejected(self, tmp_path):
        path = self.write(tmp_path, "y,x\n1,2\n3,4\n5,6\n7,8\n")
        with pytest.raises(ConfigurationError):
            load_panel_csv(
                path, {"equations": [{"response": "y", "covariates": ["x", "x"]}]}
            )

    def test_non_numeric_cell_location(self, tmp_path):
        path = self.write(tmp_path, "y,x\n1,2\n3,oops\n5,6\n7,8\n")
        with pytest.raises(DataError, match=r"row 3.*column 'x'"):
            load_panel_csv(path, {"equations": [{"response": "y", "covariates": ["x"]}]})

    def test_ragged_row(self, tmp_path):
        path = self.write(tmp_path, "y,x\n1,2\n3\n5,6\n7,8\n")
        with pytest.raises(DataError, match="ragged"):
            load_panel_csv(path, {"equations": [{"response": "y", "covariates": ["x"]}]})

    def test_unknown_column(self, tmp_path):
        path = self.write(tmp_path, "y,x\n1,2\n3,4\n5,6\n7,8\n")
        with pytest.raises(DataError, match="unknown covariate"):
            load_panel_csv(path, {"equations": [{"response": "y", "covariates": ["z"]}]})

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        pool = rng.standard_normal((6, 3)) * np.pi
        data = PanelDataset(
            responses=pool[:, :1],
            covariate_pool=pool,
            equation_specs=(EquationSpec(response_index=0, covariate_indices=(1, 2)),),
            pool_names=("a", "b", "c"),
        )
        out = tmp_path / "saved.csv"
        save_panel_csv(data, str(out))
        reloaded = load_panel_csv(
            str(out), {"equations": [{"response": "a", "covariates": ["b", "c"]}]}
        )
        assert np.array_equal(reloaded.covariate_pool, data.covariate_pool)
