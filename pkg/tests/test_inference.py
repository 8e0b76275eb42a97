import warnings

import numpy as np
from pytest import approx, fixture, raises, warns

from smoothgam.data import Dataset
from smoothgam.errors import ExtrapolationError, NothingToCompareError, RequestError
from smoothgam.families import Gamma, Gaussian
from smoothgam.fitter import fit_model
from smoothgam.inference import (LINK, MEAN, POPULATION_CAVEAT, RESPONSE, SLOPE, ContrastResult, PredictionRequest,
                                 adjust_bh, adjust_by, contrast, contrasts_frame, grid_dataset, pairwise_contrasts,
                                 predict, slope)


@fixture(scope='module')
def treat_data():
    rng = np.random.default_rng(31)
    n = 180
    treat = np.repeat(['C', 'T4', 'T3'], n // 3)
    sex = np.tile(['F', 'M'], n // 2)
    x = rng.uniform(0.0, 1.0, n)
    effect = {'C': 0.0, 'T4': 0.5, 'T3': -0.3}
    y = np.sin(2 * np.pi * x) + np.array([effect[t] for t in treat]) + 0.2 * (sex == 'M') + rng.normal(0, 0.3, n)
    return Dataset.from_columns({'x': x, 'treat': treat, 'sex': sex, 'y': y}, response='y',
                                factors={'treat': ['C', 'T4', 'T3'], 'sex': ['F', 'M']})


@fixture(scope='module')
def treat_fit(treat_data):
    return fit_model('y ~ treat + sex + s(x, k=8)', treat_data, Gaussian)


@fixture(scope='module')
def linear_fit():
    rng = np.random.default_rng(2)
    x = rng.uniform(0.0, 10.0, 80)
    data = Dataset.from_columns({'x': x, 'y': 1.0 + 0.5 * x + rng.normal(0, 1.0, 80)}, response='y')
    return fit_model('y ~ x', data, Gaussian)


@fixture(scope='module')
def gamma_fit():
    rng = np.random.default_rng(12)
    groups = np.repeat([f'g{i}' for i in range(8)], 25)
    x = rng.uniform(0.0, 1.0, 200)
    b = np.repeat(rng.normal(0.0, 0.3, 8), 25)
    y = rng.gamma(5.0, np.exp(0.5 + x + b) / 5.0)
    data = Dataset.from_columns({'g': groups, 'x': x, 'y': y}, response='y', factors=['g'])
    return fit_model('y ~ x + ri(g)', data, Gamma)


class TestPredictionRequest:
    def test_builders(self, treat_data):
        request = PredictionRequest(treat_data).excluding('s(x)').on_scale(LINK).with_level(0.9).with_clamp()
        assert request.exclude_terms == ('s(x)',)
        assert (request.scale, request.level, request.clamp) == (LINK, 0.9, True)

    def test_validation(self, treat_data):
        with raises(RequestError):
            PredictionRequest(treat_data).on_scale('probability')
        with raises(RequestError):
            PredictionRequest(treat_data).with_level(1.5)


class TestPredict:
    def test_intercept_only(self):
        y = np.array([1.0, 2.0, 4.0, 7.0, 6.0])
        fit = fit_model('y ~ 1', Dataset.from_columns({'y': y}, response='y'), Gaussian)
        prediction = predict(fit, PredictionRequest(Dataset.from_columns({'z': [0.0]})))
        assert prediction.fit[0] == approx(y.mean())
        assert prediction.se[0] == approx(y.std(ddof=1) / np.sqrt(y.size))

    def test_training_rows(self, treat_data, treat_fit):
        prediction = predict(treat_fit, PredictionRequest(treat_data))
        assert np.allclose(prediction.fit, treat_fit.fitted_values)
        assert np.all(prediction.ci_lower < prediction.fit) and np.all(prediction.fit < prediction.ci_upper)

    def test_interval_width(self, treat_data, treat_fit):
        wide = predict(treat_fit, PredictionRequest(treat_data).with_level(0.99))
        narrow = predict(treat_fit, PredictionRequest(treat_data).with_level(0.5))
        assert np.allclose(wide.ci_upper - wide.fit, 2.5758293 * wide.se, rtol=1e-6)
        assert np.allclose(narrow.ci_upper - narrow.fit, 0.6744898 * narrow.se, rtol=1e-6)

    def test_response_scale_maps_link(self, gamma_fit):
        grid = grid_dataset(gamma_fit, [{'x': 0.2, 'g': 'g0'}, {'x': 0.8, 'g': 'g3'}])
        link = predict(gamma_fit, PredictionRequest(grid).on_scale(LINK))
        response = predict(gamma_fit, PredictionRequest(grid))
        assert response.scale == RESPONSE
        assert np.allclose(response.fit, np.exp(link.fit))
        assert np.allclose(response.ci_lower, np.exp(link.ci_lower))
        assert np.allclose(response.se, np.exp(link.fit) * link.se)

    def test_exclusion_under_log_link_warns(self, gamma_fit):
        grid = grid_dataset(gamma_fit, [{'x': 0.5}], exclude=['ri(g)'])
        with warns(UserWarning, match='population level'):
            prediction = predict(gamma_fit, PredictionRequest(grid).excluding('ri(g)').on_scale(LINK))
        start, _ = gamma_fit.term_index['x']
        assert prediction.fit[0] == approx(gamma_fit.beta[0] + 0.5 * gamma_fit.beta[start])

    def test_exclusion_under_identity_is_silent(self, treat_data, treat_fit):
        with warnings.catch_warnings():
            warnings.simplefilter('error')
            predict(treat_fit, PredictionRequest(treat_data).excluding('sex'))

    def test_unknown_exclusion(self, treat_data, treat_fit):
        with raises(RequestError):
            predict(treat_fit, PredictionRequest(treat_data).excluding('ri(animal)'))

    def test_extrapolation(self, treat_fit):
        grid = grid_dataset(treat_fit, [{'x': 2.0, 'treat': 'C', 'sex': 'F'}])
        with raises(ExtrapolationError):
            predict(treat_fit, PredictionRequest(grid))
        clamped = predict(treat_fit, PredictionRequest(grid).with_clamp())
        assert np.isfinite(clamped.fit[0])

    def test_frame(self, treat_data, treat_fit):
        frame = predict(treat_fit, PredictionRequest(treat_data)).to_frame(treat_data)
        assert list(frame.columns)[-4:] == ['fit', 'se', 'ci_lower', 'ci_upper']
        assert len(frame) == treat_data.n_rows


class TestSlope:
    def test_linear_model_slope_is_the_coefficient(self, linear_fit):
        at = Dataset.from_columns({'x': [linear_fit.covariates['x'].min(), 5.0, linear_fit.covariates['x'].max()]})
        result = slope(linear_fit, at, 'x')
        assert np.allclose(result.slope, linear_fit.beta[1])
        assert np.allclose(result.se, np.sqrt(linear_fit.Vbeta[1, 1]))
        lower, upper = result.interval(0.95)
        assert np.allclose(upper - result.slope, 1.959964 * result.se, rtol=1e-6)

    def test_response_scale_under_log_link(self, gamma_fit):
        at = grid_dataset(gamma_fit, [{'x': 0.4, 'g': 'g1'}])
        result = slope(gamma_fit, at, 'x')
        start, _ = gamma_fit.term_index['x']
        mean = predict(gamma_fit, PredictionRequest(at)).fit[0]
        assert result.slope[0] == approx(gamma_fit.beta[start] * mean, rel=1e-5)

    def test_outside_support(self, linear_fit):
        with raises(ExtrapolationError):
            slope(linear_fit, Dataset.from_columns({'x': [50.0]}), 'x')

    def test_unknown_covariate(self, treat_data, treat_fit):
        with raises(RequestError):
            slope(treat_fit, treat_data, 'y')
        with raises(RequestError):
            slope(treat_fit, treat_data, 'x', exclude_terms=['s(x)'])


class TestAdjustment:
    def test_by(self):
        assert adjust_by([0.01, 0.02, 0.03]) == approx([0.055, 0.055, 0.055])

    def test_by_order_and_cap(self):
        adjusted = adjust_by([0.5, 0.001, 0.9])
        assert adjusted[1] == approx(0.001 * 3 * (1 + 1 / 2 + 1 / 3))
        assert np.all(adjusted <= 1.0)

    def test_bh(self):
        assert adjust_bh([0.01, 0.02, 0.03]) == approx([0.03, 0.03, 0.03])

    def test_empty(self):
        assert adjust_by([]).size == 0


class TestContrasts:
    def test_antisymmetry(self, treat_fit):
        a = grid_dataset(treat_fit, [{'x': 0.3, 'treat': 'T4', 'sex': 'F'}])
        b = grid_dataset(treat_fit, [{'x': 0.3, 'treat': 'T3', 'sex': 'F'}])
        forward = contrast(treat_fit, a, b)
        backward = contrast(treat_fit, b, a)
        assert forward[0] == -backward[0]
        assert forward[1] == backward[1]
        assert forward[2] == -backward[2]
        assert forward[3] == backward[3]

    def test_mean_difference_is_the_coefficient(self, treat_fit):
        results = pairwise_contrasts(treat_fit, {'x': 0.5, 'sex': 'F'}, 'treat')
        assert [result.hypothesis for result in results] == ['T4 - C', 'T3 - C', 'T3 - T4']
        start, stop = treat_fit.term_index['treat']
        t4, t3 = treat_fit.beta[start:stop]
        assert [result.estimate for result in results] == approx([t4, t3, t3 - t4])
        assert results[0].se == approx(np.sqrt(treat_fit.Vbeta[start, start]))

    def test_within_groups_share_one_adjustment(self, treat_fit):
        results = pairwise_contrasts(treat_fit, {'x': 0.5}, 'treat', within='sex')
        assert len(results) == 6
        assert [result.group for result in results] == ['sex=F'] * 3 + ['sex=M'] * 3
        expected = np.maximum(adjust_by([result.p_raw for result in results]), [result.p_raw for result in results])
        assert [result.p_adjusted for result in results] == approx(expected.tolist())
        for result in results:
            assert result.ci_lower == approx(result.estimate - 1.959964 * result.se, abs=1e-6)

    def test_slope_contrast_of_parallel_curves(self, treat_fit):
        results = pairwise_contrasts(treat_fit, {'x': 0.5, 'sex': 'M'}, 'treat', quantity=SLOPE)
        assert all(abs(result.estimate) < 1e-8 for result in results)

    def test_nothing_to_compare(self):
        rng = np.random.default_rng(0)
        data = Dataset.from_columns({'x': rng.uniform(size=30), 'g': ['only'] * 30, 'y': rng.normal(size=30)},
                                    response='y', factors=['g'])
        fit = fit_model('y ~ x + ri(g)', data, Gaussian)
        with raises(NothingToCompareError) as e:
            pairwise_contrasts(fit, {'x': 0.5}, 'g')
        assert e.value.prefix == 'ERROR:inference:nothing_to_compare:'

    def test_request_errors(self, treat_fit):
        with raises(RequestError):
            pairwise_contrasts(treat_fit, {'x': 0.5}, 'animal')
        with raises(RequestError):
            pairwise_contrasts(treat_fit, {'x': 0.5, 'sex': 'F'}, 'treat', quantity='median')
        with raises(RequestError):
            contrast(treat_fit, grid_dataset(treat_fit, [{'x': 0.5, 'treat': 'C', 'sex': 'F'}]),
                     grid_dataset(treat_fit, [{'x': 0.5, 'treat': 'T4', 'sex': 'F'}]), SLOPE)

    def test_population_caveat(self, gamma_fit):
        with warns(UserWarning) as record:
            pairwise_contrasts(gamma_fit, {'x': 0.5, 'g': 'g0'}, 'g', exclude_terms=['x'])
        assert any(str(item.message) == POPULATION_CAVEAT for item in record)

    def test_frame(self, treat_fit):
        frame = contrasts_frame(pairwise_contrasts(treat_fit, {'x': 0.5, 'sex': 'F'}, 'treat', quantity=MEAN))
        assert list(frame.columns) == list(ContrastResult.COLUMNS)
        assert len(frame) == 3


class TestGrid:
    def test_level_order_follows_training(self, treat_fit):
        grid = grid_dataset(treat_fit, [{'x': 0.1, 'treat': 'T3', 'sex': 'M'}])
        assert grid.factor('treat').levels == ('C', 'T4', 'T3')
        assert grid.factor('treat').values.tolist() == [2]

    def test_missing_column(self, treat_fit):
        with raises(RequestError) as e:
            grid_dataset(treat_fit, [{'x': 0.1, 'treat': 'C'}])
        assert e.value.column == 'sex'

    def test_excluded_factor_is_filled(self, gamma_fit):
        grid = grid_dataset(gamma_fit, [{'x': 0.1}, {'x': 0.2}], exclude=['ri(g)'])
        assert grid.factor('g').labels == ['g0', 'g0']


class TestCoverage:
    def test_credible_intervals_cover_the_truth(self):
        rng = np.random.default_rng(2024)
        covered = []
        for _ in range(200):
            x = rng.uniform(0.0, 1.0, 200)
            truth = np.sin(2 * np.pi * x)
            data = Dataset.from_columns({'x': x, 'y': truth + rng.normal(0.0, 0.2, 200)}, response='y')
            prediction = predict(fit_model('y ~ s(x, k=10)', data, Gaussian), PredictionRequest(data))
            covered.append(np.mean((prediction.ci_lower <= truth) & (truth <= prediction.ci_upper)))
        assert 0.88 <= np.mean(covered) <= 0.99
