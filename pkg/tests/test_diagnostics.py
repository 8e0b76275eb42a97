import numpy as np
import statsmodels.api as sm
from pytest import approx, fixture, raises
from scipy.stats import kstest

from smoothgam.data import Dataset
from smoothgam.diagnostics import compare_models, kcheck, summarize, term_test
from smoothgam.errors import ComparisonError, RequestError
from smoothgam.families import Gamma, Gaussian, Tweedie
from smoothgam.fitter import fit_model
from smoothgam.simulate import simulate
from smoothgam.wood import fit_wood_lactation


@fixture(scope='module')
def noise_data():
    rng = np.random.default_rng(5)
    n = 250
    x, z = rng.uniform(0.0, 1.0, n), rng.uniform(0.0, 1.0, n)
    y = np.sin(2 * np.pi * x) + rng.normal(0.0, 0.3, n)
    return Dataset.from_columns({'x': x, 'z': z, 'y': y}, response='y')


@fixture(scope='module')
def noise_fit(noise_data):
    return fit_model('y ~ s(x, k=10) + s(z, k=6)', noise_data, Gaussian)


@fixture(scope='module')
def sin_data():
    return simulate('sin', 200, seed=11)


@fixture(scope='module')
def lactation():
    return simulate('lactation', 44, seed=3)


class TestTermTest:
    def test_real_and_null_smooths(self, noise_fit):
        real = term_test(noise_fit, 's(x)')
        null = term_test(noise_fit, 's(z)')
        assert real.p_value < 1e-10
        assert null.p_value > 0.01
        assert real.kind == 'smooth' and real.columns == 9
        assert 1.0 <= real.df1 <= 9.0
        assert np.isclose(real.df2, noise_fit.residual_df)

    def test_parametric_matches_ordinary_least_squares(self, noise_data):
        fit = fit_model('y ~ x + z', noise_data, Gaussian)
        X = sm.add_constant(np.column_stack([noise_data.numeric('x'), noise_data.numeric('z')]))
        reference = sm.OLS(noise_data.y, X).fit()
        test = term_test(fit, 'x')
        assert test.df1 == 1.0
        assert np.isclose(test.statistic, reference.tvalues[1] ** 2, rtol=1e-6)
        assert np.isclose(test.p_value, reference.pvalues[1], rtol=1e-5)

    def test_unknown_term(self, noise_fit):
        with raises(RequestError):
            term_test(noise_fit, 's(w)')


class TestKCheck:
    def test_small_basis_is_flagged(self, sin_data):
        fit = fit_model('y ~ s(x, k=3)', sin_data, Gaussian)
        [check] = kcheck(fit, seed=1, n_permutations=200)
        assert check.label == 's(x)' and check.k == 3
        assert check.index < 0.8
        assert check.p_value < 0.05
        assert check.flagged

    def test_adequate_basis_is_not_flagged(self, sin_data):
        fit = fit_model('y ~ s(x, k=15)', sin_data, Gaussian)
        [check] = kcheck(fit, seed=1, n_permutations=200)
        assert not check.flagged
        assert check.edf < 0.9 * 15

    def test_index_uses_raw_residual_scale(self):
        rng = np.random.default_rng(12)
        x = rng.uniform(0.0, 1.0, 150)
        y = rng.gamma(3.0, np.exp(np.sin(2 * np.pi * x)) / 3.0)
        fit = fit_model('y ~ s(x, k=8)', Dataset.from_columns({'x': x, 'y': y}, response='y'), Gamma)
        [check] = kcheck(fit, seed=0, n_permutations=10)
        residuals = fit.family.deviance_residuals(fit.y, fit.fitted_values, fit.weights)[np.argsort(x, kind='stable')]
        assert check.index == approx(np.sum(np.diff(residuals) ** 2) / (2.0 * np.sum(residuals ** 2)), rel=1e-12)

    def test_seeded(self, sin_data):
        fit = fit_model('y ~ s(x, k=6)', sin_data, Gaussian)
        assert kcheck(fit, seed=4, n_permutations=100) == kcheck(fit, seed=4, n_permutations=100)

    def test_only_univariate_smooths(self, noise_data):
        assert kcheck(fit_model('y ~ x + z', noise_data, Gaussian)) == []


class TestSummary:
    def test_fields(self, noise_fit):
        summary = summarize(noise_fit)
        assert summary.kcheck == ()
        assert list(summary.terms_frame()['label']) == ['(Intercept)', 's(x)', 's(z)']
        assert set(summary.lambdas) == {'s(x)', 's(z)'}
        assert summary.to_dict()['terms'][1]['label'] == 's(x)'

    def test_text(self, noise_fit):
        text = summarize(noise_fit, check_seed=0).to_text()
        assert text.startswith('Formula: y ~ s(x, k=10) + s(z, k=6)')
        assert 'REML' in text
        assert 'Smoothing parameters:' in text
        assert 'Basis dimension check:' in text


class TestCompareModels:
    def test_ordering(self, lactation):
        smooth = fit_model('fat ~ s(week, k=9)', lactation, Tweedie)
        linear = fit_model('fat ~ week', lactation, Gaussian)
        wood = fit_wood_lactation(lactation)
        table = compare_models([('linear', linear), ('smooth', smooth), ('wood', wood)])
        assert list(table.columns) == ['model', 'response', 'family', 'edf', 'df', 'aic', 'deviance',
                                       'deviance_explained', 'rmse', 'n', 'delta_aic']
        assert np.all(np.diff(table['aic']) >= 0.0)
        assert table['delta_aic'].iloc[0] == 0.0
        assert np.allclose(table['delta_aic'], table['aic'] - table['aic'].min())
        row = table.set_index('model').loc['wood']
        assert row['df'] == 4.0 and row['family'] == 'gaussian'
        assert table.set_index('model').loc['smooth', 'df'] == smooth.edf_total + 2

    def test_different_responses(self, sin_data, lactation):
        with raises(ComparisonError):
            compare_models([('a', fit_model('y ~ x', sin_data, Gaussian)),
                            ('b', fit_model('fat ~ week', lactation, Gaussian))])

    def test_different_sizes(self, sin_data):
        half = sin_data.subset(np.arange(sin_data.n_rows) < 100)
        with raises(ComparisonError):
            compare_models([('a', fit_model('y ~ x', sin_data, Gaussian)),
                            ('b', fit_model('y ~ x', half, Gaussian))])

    def test_empty(self):
        with raises(ComparisonError):
            compare_models([])


class TestCalibration:
    def test_null_term_p_values_are_uniform(self):
        rng = np.random.default_rng(77)
        p_values = []
        for _ in range(500):
            x = rng.uniform(0.0, 1.0, 200)
            data = Dataset.from_columns({'x': x, 'y': rng.normal(0.0, 1.0, 200)}, response='y')
            p_values.append(term_test(fit_model('y ~ s(x, k=10)', data, Gaussian), 's(x)').p_value)
        assert kstest(p_values, 'uniform').statistic < 0.08
