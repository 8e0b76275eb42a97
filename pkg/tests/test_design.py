import numpy as np
from pytest import fixture, raises

from smoothgam.data import Dataset
from smoothgam.design import assemble_design, design_matrix, normalize_labels
from smoothgam.errors import BasisDimensionError, RequestError, SpecificationError
from smoothgam.families import Gaussian
from smoothgam.fitter import fit_model
from smoothgam.inference import grid_dataset
from smoothgam.simulate import simulate
from smoothgam.terms.instances import Intercept, RandomIntercept, Smooth


@fixture
def sin_data():
    return simulate('sin', 150, seed=4)


@fixture
def grouped():
    rng = np.random.default_rng(1)
    return Dataset.from_columns({
        'x': rng.uniform(0.0, 1.0, 60),
        'g': np.repeat(['a', 'b', 'c', 'd'], 15),
        'y': rng.normal(size=60),
    }, response='y', factors=['g'])


@fixture(scope='module')
def four_levels():
    rng = np.random.default_rng(14)
    g = np.repeat(['a', 'b', 'c', 'd'], 60)
    x = rng.uniform(0.0, 1.0, 240)
    shift = np.select([g == 'b', g == 'c', g == 'd'], [0.4, -0.3, 0.1], 0.0)
    y = np.sin(2 * np.pi * x) + shift * np.cos(3.0 * x) + rng.normal(0.0, 0.2, 240)
    return Dataset.from_columns({'x': x, 'g': g, 'y': y}, response='y', factors=['g'])

class TestAssemble:
    def test_layout(self, grouped):
        M = assemble_design('y ~ 1 + x + s(x, k=6) + ri(g)', grouped)
        assert M.X.shape == (60, 1 + 1 + 6 + 4)
        assert M.term_index == {'(Intercept)': (0, 1), 'x': (1, 2), 's(x)': (2, 8), 'ri(g)': (8, 12)}
        assert M.groups == ('s(x)', 'ri(g)')
        assert np.all(M.X[:, 0] == 1.0)
        assert np.allclose(M.X[:, 1], grouped.numeric('x'))

    def test_penalty_scaling(self, grouped):
        M = assemble_design('y ~ s(x, k=6) + ri(g)', grouped)
        block = M.X[:, slice(*M.term_index['s(x)'])]
        penalty = M.group_penalty('s(x)')
        assert np.isclose(np.abs(penalty).sum(axis=0).max(), np.abs(block).sum(axis=1).max() ** 2)
        assert M.penalty_scales['ri(g)'] == 1.0

    def test_penalty_sum(self, grouped):
        M = assemble_design('y ~ s(x, k=5) + ri(g)', grouped)
        total = M.penalty_sum([2.0, 3.0])
        assert np.allclose(total, 2.0 * M.group_penalty('s(x)') + 3.0 * M.group_penalty('ri(g)'))

    def test_null_space_dim(self, sin_data):
        assert assemble_design('y ~ s(x)', sin_data).null_space_dim == 2
        assert assemble_design('y ~ s(x, bs="bs")', sin_data).null_space_dim == 2

    def test_intercept_required(self, sin_data):
        with raises(SpecificationError):
            assemble_design([Smooth.on('x')], sin_data)
        with raises(SpecificationError):
            assemble_design([Intercept, Intercept, Smooth.on('x')], sin_data)

    def test_basis_errors_name_the_term(self):
        data = Dataset.from_columns({'x': np.tile(np.arange(5.0), 4), 'y': np.arange(20.0)}, response='y')
        with raises(BasisDimensionError) as e:
            assemble_design('y ~ s(x, k=9)', data)
        assert e.value.term == 's(x)'

    def test_term_lookup(self, grouped):
        M = assemble_design([Intercept, RandomIntercept.on('g')], grouped)
        assert M.term('ri(g)').n_columns == 4
        with raises(RequestError):
            M.term('s(x)')


class TestDesignMatrix:
    def test_reproduces_training_rows(self, grouped):
        M = assemble_design('y ~ x + s(x, k=6) + ri(g)', grouped)
        assert np.allclose(design_matrix(M.fitted_terms, grouped), M.X)

    def test_exclusion_zeroes_columns(self, grouped):
        M = assemble_design('y ~ x + s(x, k=6) + ri(g)', grouped)
        X = design_matrix(M.fitted_terms, grouped, exclude=['ri( g )'])
        start, stop = M.term_index['ri(g)']
        assert np.all(X[:, start:stop] == 0.0)
        assert np.allclose(X[:, :start], M.X[:, :start])

    def test_excluded_terms_are_not_evaluated(self, grouped):
        M = assemble_design('y ~ s(x, k=6) + ri(g)', grouped)
        grid = Dataset.from_columns({'x': [0.5], 'g': ['unseen']}, factors=['g'])
        X = design_matrix(M.fitted_terms, grid, exclude=['ri(g)'])
        assert X.shape == (1, M.P)

    def test_normalize_labels(self, grouped):
        M = assemble_design('y ~ s(x, k=6) + ri(g)', grouped)
        assert normalize_labels(['s( x )', 'ri(g)'], M.fitted_terms) == ['s(x)', 'ri(g)']
        with raises(RequestError) as e:
            normalize_labels(['fs(x,g)'], M.fitted_terms)
        assert e.value.EXIT_CODE == 3


class TestConstrainedInteraction:
    FORMULA = 'y ~ g + s(x, k=8) + sz(x, g, k=8)'

    def test_width(self, four_levels):
        M = assemble_design(self.FORMULA, four_levels)
        start, stop = M.term_index['sz(x,g)']
        assert stop - start == (4 - 1) * 8

    def test_level_contributions_cancel(self, four_levels):
        fit = fit_model(self.FORMULA, four_levels, Gaussian)
        fitted = fit.term('sz(x,g)')
        beta = fit.coefficients('sz(x,g)')
        x = four_levels.numeric('x')
        grid = np.linspace(x.min(), x.max(), 60)
        designs = [fitted.design(grid_dataset(fit, [{'x': value, 'g': level} for value in grid]))
                   for level in ('a', 'b', 'c', 'd')]
        assert np.abs(sum(designs)).max() < 1e-8
        assert np.abs(sum(design @ beta for design in designs)).max() < 1e-8
        assert np.abs(designs[1] @ beta).max() > 1e-3
