import numpy as np
import pytest

from srelasso.data_model import EquationSpec, PanelDataset
from srelasso.errors import ConfigurationError
from srelasso.lrv import (
    BlockScheme,
    HacOptions,
    block_sum_lrcov,
    compute_loadings,
    default_bandwidth,
    loadings_block_sum,
    loadings_for_design,
    newey_west_lvar,
    omega_jk,
)


class TestNeweyWest:
    def test_bandwidth_zero_is_sample_variance(self):
        rng = np.random.default_rng(0)
        u = rng.standard_normal(500)
        got = newey_west_lvar(u, HacOptions(0))
        assert got == pytest.approx(float(np.var(u)), rel=1e-12)

    def test_constant_series_is_zero(self):
        assert newey_west_lvar(np.full(50, 3.7), HacOptions(4)) == pytest.approx(0.0, abs=1e-12)

    def test_ma1_closed_form(self):
        # u_t = eta_t + 0.5 eta_{t-1}: long-run variance (1 + 0.5)^2 = 2.25
        rng = np.random.default_rng(1)
        estimates = []
        for _ in range(12):
            eta = rng.standard_normal(20_001)
            u = eta[1:] + 0.5 * eta[:-1]
            estimates.append(newey_west_lvar(u, HacOptions(50)))
        assert float(np.mean(estimates)) == pytest.approx(2.25, abs=0.1)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        u = rng.standard_normal(300)
        a = newey_west_lvar(u, HacOptions(5))
        b = newey_west_lvar(u + 123.456, HacOptions(5))
        assert a == pytest.approx(b, abs=1e-10)

    def test_bandwidth_validation(self):
        with pytest.raises(ConfigurationError):
            newey_west_lvar(np.ones(10), HacOptions(10))

    def test_default_bandwidth_rule(self):
        assert default_bandwidth(100) == 4
        assert default_bandwidth(200) == 4  # floor(4 * 2^(2/9)) = floor(4.66)
        assert default_bandwidth(10_000) == 11


def make_data_from_pool(pool):
    n, P = pool.shape
    return PanelDataset(
        responses=np.zeros((n, 1)),
        covariate_pool=pool,
        equation_specs=(
            EquationSpec(response_index=0, covariate_indices=tuple(range(P))),
        ),
    )


class TestComputeLoadings:
    def test_zero_column_floored(self):
        rng = np.random.default_rng(3)
        pool = rng.standard_normal((50, 3))
        pool[:, 1] = 0.0
        data = make_data_from_pool(pool)
        lm = compute_loadings(data, [rng.standard_normal(50)], HacOptions(2))
        assert lm.floor_flags[0][1]
        assert lm.values[0][1] > 0.0

    def test_zero_residuals_all_floored(self):
        rng = np.random.default_rng(4)
        data = make_data_from_pool(rng.standard_normal((50, 3)))
        lm = compute_loadings(data, [np.zeros(50)], HacOptions(2))
        assert lm.floor_flags[0].all()
        assert np.all(lm.values[0] > 0.0)

    def test_iid_unit_scale(self):
        rng = np.random.default_rng(5)
        n = 10_000
        data = make_data_from_pool(rng.standard_normal((n, 2)))
        lm = compute_loadings(data, [rng.standard_normal(n)], HacOptions(0))
        np.testing.assert_allclose(lm.values[0], 1.0, atol=0.05)

    def test_block_sum_variant_matches_scale(self):
        rng = np.random.default_rng(6)
        n = 10_000
        data = make_data_from_pool(rng.standard_normal((n, 2)))
        resid = rng.standard_normal(n)
        lm = loadings_block_sum(data, [resid], BlockScheme(5))
        np.testing.assert_allclose(lm.values[0], 1.0, atol=0.08)

    def test_design_level_helper(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((200, 4))
        eps = rng.standard_normal(200)
        w, flags = loadings_for_design(X, eps, HacOptions(0))
        assert w.shape == (4,)
        assert not flags.any()


class TestBlockSum:
    def test_unit_blocks_give_variance(self):
        # series with exact zero mean: the estimate is the mean of squares
        u = np.array([1.0, -1.0, 2.0, -2.0, 3.0, -3.0])
        got = block_sum_lrcov(u, BlockScheme(1))
        assert got[0, 0] == pytest.approx(float(np.mean(u**2)), rel=1e-12)

    def test_zero_input(self):
        got = block_sum_lrcov(np.zeros((30, 2)), BlockScheme(3))
        np.testing.assert_array_equal(got, np.zeros((2, 2)))

    def test_iid_calibration(self):
        rng = np.random.default_rng(8)
        got = block_sum_lrcov(rng.standard_normal(10_000), BlockScheme(10))
        assert got[0, 0] == pytest.approx(1.0, abs=0.1)

    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(9)
        for b in (1, 3, 7):
            V = rng.standard_normal((211, 5)) @ rng.standard_normal((5, 5))
            M = block_sum_lrcov(V, BlockScheme(b))
            assert np.array_equal(M, M.T)
            eig = np.linalg.eigvalsh(M)
            assert eig.min() >= -1e-10 * np.trace(M)

    def test_shift_invariance(self):
        rng = np.random.default_rng(10)
        V = rng.standard_normal((100, 3))
        a = block_sum_lrcov(V, BlockScheme(4))
        b = block_sum_lrcov(V + np.array([1.0, -2.0, 3.0]), BlockScheme(4))
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_trailing_observations_dropped(self):
        u = np.arange(10.0)
        # block size 3 uses only the first 9 observations
        got = block_sum_lrcov(u, BlockScheme(3))
        centered = u - u.mean()
        sums = centered[:9].reshape(3, 3).sum(axis=1)
        assert got[0, 0] == pytest.approx(float(np.sum(sums**2) / 9.0), rel=1e-12)

    def test_block_size_validation(self):
        with pytest.raises(ConfigurationError):
            block_sum_lrcov(np.ones(5), BlockScheme(6))


class TestOmega:
    def test_zero_scores_floored(self):
        val, floored = omega_jk(np.zeros(40), BlockScheme(2))
        assert floored
        assert val > 0.0

    def test_unit_blocks_mean_square(self):
        u = np.array([2.0, -2.0, 1.0, -1.0])
        val, floored = omega_jk(u, BlockScheme(1))
        assert not floored
        assert val == pytest.approx(float(np.mean(u**2)), rel=1e-12)

    def test_ar1_cross_estimator_agreement(self):
        # block-sum and kernel estimates agree on a dependent series
        rng = np.random.default_rng(11)
        n = 20_000
        phi = 0.5
        e = rng.standard_normal(n + 200)
        x = np.zeros(n + 200)
        for t in range(1, n + 200):
            x[t] = phi * x[t - 1] + e[t]
        x = x[200:]
        blocked, _ = omega_jk(x, BlockScheme(20))
        kernel = newey_west_lvar(x, HacOptions(50))
        assert blocked == pytest.approx(kernel, rel=0.10)
