"""
Tests for OLS, ADF, Jarque-Bera and partial correlation
"""

import numpy as np
import pytest

from services.errors import RankDeficientError, StatTestError
from services.stattests import (ADF_SPECS, adf_table, adf_test, jarque_bera, monte_carlo_rejection_rate, ols,
                                partial_correlation_test)


@pytest.mark.unit
class TestOls:

    def test_exact_line(self):
        X = np.column_stack([np.ones(3), [0.0, 1.0, 2.0]])
        fit = ols([1.0, 2.0, 3.0], X)
        np.testing.assert_allclose(fit.coefficients, [1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(fit.residuals, 0.0, atol=1e-12)

    def test_orthogonal_response(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        fit = ols([0.0, 0.0, 1.0], X)
        np.testing.assert_allclose(fit.coefficients, 0.0, atol=1e-12)

    def test_duplicated_column(self, rng):
        x = rng.normal(size=20)
        with pytest.raises(RankDeficientError):
            ols(rng.normal(size=20), np.column_stack([x, x]))

    def test_too_few_rows(self):
        with pytest.raises(StatTestError):
            ols([1.0, 2.0], np.ones((2, 2)))

    def test_standard_errors_match_textbook(self, rng):
        X = np.column_stack([np.ones(200), rng.normal(size=200)])
        y = X @ [0.5, -1.0] + rng.normal(size=200)
        fit = ols(y, X)
        sigma2 = fit.rss / (200 - 2)
        expected = np.sqrt(np.diag(np.linalg.inv(X.T @ X)) * sigma2)
        np.testing.assert_allclose(fit.standard_errors, expected)
        assert fit.dof == 198


@pytest.mark.unit
class TestAdf:

    def test_random_walks_rarely_reject(self):
        rejections = 0
        for seed in range(20):
            walk = np.cumsum(np.random.default_rng(seed).normal(size=500))
            rejections += adf_test(walk, 'c').p_value < 0.05
        assert rejections <= 5

    def test_white_noise_rejects(self, rng):
        assert adf_test(rng.normal(size=500), 'c').p_value < 0.01

    def test_all_specs(self, make_dataset, rng):
        ds = make_dataset(np.cumsum(rng.normal(size=(300, 2)), axis=0), ['a', 'b'])
        table = adf_table(ds)
        assert set(table.results) == {'a', 'b'}
        for by_spec in table.results.values():
            assert tuple(by_spec) == ADF_SPECS
        doc = table.to_document()
        assert set(doc['p_values']['a']) == set(ADF_SPECS)

    def test_scale_invariance(self, rng):
        y = np.cumsum(rng.normal(size=300))
        for spec in ADF_SPECS:
            a = adf_test(y, spec)
            b = adf_test(3.0 * y, spec)
            assert a.test_statistic == pytest.approx(b.test_statistic, rel=1e-8)
            assert a.lags_used == b.lags_used

    def test_critical_values_ordered(self, rng):
        result = adf_test(rng.normal(size=400), 'ct')
        cv = result.critical_values
        assert cv['1%'] < cv['5%'] < cv['10%']

    def test_nonstationary_requires_every_spec(self, make_dataset, rng):
        noise = rng.normal(size=400)
        walk = np.cumsum(rng.normal(size=400))
        table = adf_table(make_dataset(np.column_stack([noise, walk]), ['noise', 'walk']))
        assert 'noise' not in table.nonstationary

    def test_rejects_bad_input(self):
        with pytest.raises(StatTestError):
            adf_test(np.ones(50), 'c')
        with pytest.raises(StatTestError):
            adf_test(np.arange(50.0), 'xyz')
        with pytest.raises(StatTestError):
            adf_test(np.arange(8.0), 'c', max_lag=2)

    @pytest.mark.slow
    def test_size_under_unit_root(self):
        rate = monte_carlo_rejection_rate(lambda g: np.cumsum(g.normal(size=500)),
                                          lambda y: adf_test(y, 'c').p_value, n_sims=1000, seed=1)
        assert 0.03 <= rate <= 0.07

    @pytest.mark.slow
    def test_power_on_white_noise(self):
        rate = monte_carlo_rejection_rate(lambda g: g.normal(size=500),
                                          lambda y: adf_test(y, 'c').p_value, n_sims=1000, alpha=0.01, seed=2)
        assert rate > 0.99


@pytest.mark.unit
class TestJarqueBera:

    def test_zero_statistic(self):
        sample = np.array([-1.0] * 2 + [1.0] * 2 + [0.0] * 8)
        result = jarque_bera(sample)
        assert result.columns[0].skewness == pytest.approx(0.0, abs=1e-12)
        assert result.columns[0].kurtosis == pytest.approx(3.0)
        assert result.columns[0].jb_statistic == pytest.approx(0.0, abs=1e-12)
        assert result.columns[0].p_value == pytest.approx(1.0)

    def test_platykurtic_sample(self):
        c = np.sqrt(9.0 - np.sqrt(80.0))
        sample = np.concatenate([np.full(250, 1.0), np.full(250, -1.0), np.full(250, c), np.full(250, -c)])
        column = jarque_bera(sample).columns[0]
        assert column.kurtosis == pytest.approx(1.8)
        assert column.jb_statistic == pytest.approx(60.0)

    def test_aggregate(self, rng):
        residuals = rng.normal(size=(500, 3))
        result = jarque_bera(residuals)
        assert result.aggregate_statistic == pytest.approx(sum(c.jb_statistic for c in result.columns))
        assert result.aggregate_dof == 6
        assert set(result.to_document(['a', 'b', 'c'])['columns']) == {'a', 'b', 'c'}

    def test_uniform_noise_fails_normality(self, rng):
        assert jarque_bera(rng.uniform(-1, 1, size=5000)).columns[0].p_value < 0.01

    def test_too_short(self):
        with pytest.raises(StatTestError):
            jarque_bera(np.arange(5.0))

    @pytest.mark.slow
    def test_calibration(self):
        rate = monte_carlo_rejection_rate(lambda g: g.normal(size=1000),
                                          lambda x: jarque_bera(x).columns[0].p_value, n_sims=1000, seed=3)
        assert 0.03 <= rate <= 0.07


@pytest.mark.unit
class TestPartialCorrelation:

    def test_self_dependence(self, rng):
        x = rng.normal(size=100)
        result = partial_correlation_test(x, x)
        assert result.statistic == pytest.approx(1.0)
        assert result.p_value == pytest.approx(0.0)
        assert result.independent is False

    def test_chain_is_screened_off(self, rng):
        T = 5000
        x = rng.normal(size=T)
        z = 0.8 * x + rng.normal(size=T)
        noise = rng.normal(size=T)
        design = np.column_stack([np.ones(T), x, z])
        # noise exactly orthogonal to x and z, so x and y are independent given z
        noise = ols(noise, design).residuals
        y = 0.7 * z + noise
        result = partial_correlation_test(x, y, z)
        assert result.statistic == pytest.approx(0.0, abs=1e-10)
        assert result.independent is True

    def test_chain_marginal_dependence(self, rng):
        x = rng.normal(size=2000)
        z = 0.8 * x + rng.normal(size=2000)
        y = 0.7 * z + rng.normal(size=2000)
        assert partial_correlation_test(x, y).independent is False

    def test_degenerate_conditioning_is_undetermined(self, rng):
        x = rng.normal(size=50)
        z = rng.normal(size=50)
        result = partial_correlation_test(x, rng.normal(size=50), np.column_stack([z, z]))
        assert result.independent is None
        assert np.isnan(result.p_value)

    def test_degrees_of_freedom(self, rng):
        result = partial_correlation_test(rng.normal(size=100), rng.normal(size=100), rng.normal(size=(100, 3)))
        assert result.dof == 100 - 2 - 3

    def test_too_few_rows(self, rng):
        with pytest.raises(StatTestError):
            partial_correlation_test(rng.normal(size=4), rng.normal(size=4), rng.normal(size=(4, 2)))

    @pytest.mark.slow
    def test_calibration_independent_uniform(self):
        def simulate(g):
            return g.uniform(size=(2000, 2))

        rate = monte_carlo_rejection_rate(simulate, lambda s: partial_correlation_test(s[:, 0], s[:, 1]).p_value,
                                          n_sims=1000, seed=4)
        assert 0.03 <= rate <= 0.07
