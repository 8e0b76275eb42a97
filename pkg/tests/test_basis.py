import numpy as np
from pytest import fixture, mark, raises, warns
from scipy.integrate import quad
from scipy.interpolate import BSpline

from smoothgam.basis import (BasisSpec, PenaltyMatrix, absorb_constraint, bspline_basis, bspline_design,
                             bspline_penalty, evaluate_basis, indicator_basis, penalty_null_space, resolve_knots,
                             tprs_basis)
from smoothgam.design import assemble_design
from smoothgam.errors import BasisDimensionError, BasisRankError, ExtrapolationError, UnsupportedPenaltyError
from smoothgam.families import Gaussian
from smoothgam.fitter import pirls_fit
from smoothgam.simulate import simulate


@fixture
def x():
    return np.sort(np.random.default_rng(11).uniform(0.0, 10.0, 200))


def reference_design(x, knots, degree, derivative=0):
    """Every B-spline evaluated through scipy, one unit coefficient vector at a time."""
    k = len(knots) - degree - 1
    columns = []
    for j in range(k):
        spline = BSpline(knots, np.eye(k)[j], degree)
        if derivative:
            spline = spline.derivative(derivative)
        columns.append(spline(x))
    return np.column_stack(columns)


def greville(knots, degree):
    k = len(knots) - degree - 1
    return np.array([np.mean(knots[j + 1:j + degree + 1]) for j in range(k)])


class TestBasisSpec:
    def test_builders(self):
        spec = BasisSpec().on('day').with_k(7).with_degree(2).with_kind('bspline')
        assert (spec.covariate_name, spec.k, spec.degree) == ('day', 7, 2)
        assert BasisSpec.from_dict(spec.to_dict()) == spec

    def test_dimension_limits(self):
        with raises(BasisDimensionError):
            BasisSpec(k=4, degree=3).validate()
        with raises(BasisDimensionError):
            BasisSpec(kind='tprs', k=2).validate()
        with raises(BasisDimensionError):
            BasisSpec(kind='natural').validate()

    def test_explicit_knot_count(self):
        with raises(BasisDimensionError):
            BasisSpec(k=5).with_knots([0, 0, 0, 0, 1, 1, 1, 1]).validate()


class TestBSpline:
    def test_knot_placement(self, x):
        spec = resolve_knots(x, BasisSpec(k=8))
        knots = np.asarray(spec.knots)
        assert knots.size == 12
        assert np.all(knots[:4] == x.min()) and np.all(knots[-4:] == x.max())
        assert np.allclose(knots[4:8], np.quantile(np.unique(x), [0.2, 0.4, 0.6, 0.8]))

    def test_matches_reference(self, x):
        matrix = bspline_basis(x, BasisSpec(k=10))
        knots = np.asarray(matrix.spec.knots)
        assert matrix.values.shape == (200, 10)
        assert np.allclose(matrix.values, reference_design(x, knots, 3), atol=1e-12)

    def test_partition_of_unity(self, x):
        matrix = bspline_basis(x, BasisSpec(k=12))
        assert np.allclose(matrix.values.sum(axis=1), 1.0)
        assert np.all(matrix.values >= -1e-14)

    def test_right_boundary(self, x):
        matrix = bspline_basis(x, BasisSpec(k=6))
        assert np.isclose(matrix.values[-1, -1], 1.0)

    def test_second_derivative_matches_reference(self, x):
        knots = np.asarray(resolve_knots(x, BasisSpec(k=9)).knots)
        interior = x[(x > knots[0]) & (x < knots[-1])]
        assert np.allclose(bspline_design(interior, knots, 3, derivative=2),
                           reference_design(interior, knots, 3, derivative=2), atol=1e-9)

    def test_too_few_unique_values(self):
        with raises(BasisDimensionError):
            bspline_basis(np.array([1.0, 2.0, 3.0, 1.0]), BasisSpec(k=8).on('week'))


class TestBSplinePenalty:
    @mark.parametrize('k', [5, 10, 16])
    def test_matches_adaptive_quadrature(self, k):
        x = np.random.default_rng(k).uniform(0.0, 1.0, 300)
        spec = resolve_knots(x, BasisSpec(k=k))
        knots = np.asarray(spec.knots)
        second = [BSpline(knots, unit, 3).derivative(2) for unit in np.eye(k)]
        breaks = np.unique(knots)
        expected = np.zeros((k, k))
        for u in range(k):
            for v in range(u, k):
                expected[u, v] = expected[v, u] = sum(
                    quad(lambda t: second[u](t) * second[v](t), a, b, epsabs=1e-10, epsrel=1e-12, limit=200)[0]
                    for a, b in zip(breaks[:-1], breaks[1:]))
        penalty = bspline_penalty(spec)
        assert np.allclose(penalty.values, expected, rtol=1e-8, atol=1e-12 * np.abs(expected).max())

    def test_null_space(self, x):
        spec = resolve_knots(x, BasisSpec(k=10))
        penalty = bspline_penalty(spec)
        knots = np.asarray(spec.knots)
        scale = np.abs(penalty.values).max()
        assert np.abs(penalty.values @ np.ones(10)).max() < 1e-9 * scale
        assert np.abs(penalty.values @ greville(knots, 3)).max() < 1e-9 * scale * knots.max()
        assert penalty.rank == 8
        assert penalty.null_space_dim == 2

    def test_symmetric_positive_semidefinite(self, x):
        penalty = bspline_penalty(resolve_knots(x, BasisSpec(k=10)))
        eigenvalues = np.linalg.eigvalsh(penalty.values)
        assert np.allclose(penalty.values, penalty.values.T)
        assert eigenvalues.min() > -1e-9 * eigenvalues.max()
        assert np.sum(eigenvalues > 1e-9 * eigenvalues.max()) == 8

    def test_linear_splines_unsupported(self, x):
        with raises(UnsupportedPenaltyError):
            bspline_penalty(resolve_knots(x, BasisSpec(k=6, degree=1)))

    def test_null_space_helper(self, x):
        penalty = bspline_penalty(resolve_knots(x, BasisSpec(k=7)))
        null = penalty_null_space(penalty)
        assert null.shape == (7, 2)
        assert np.abs(penalty.values @ null).max() < 1e-8 * np.abs(penalty.values).max()


class TestThinPlate:
    def test_shape_and_null_space_columns(self, x):
        matrix, penalty = tprs_basis(x, BasisSpec(kind='tprs', k=8).on('x'))
        assert matrix.values.shape == (200, 8)
        assert np.allclose(matrix.values[:, -2], 1.0)
        assert np.allclose(matrix.values[:, -1], x)
        assert penalty.rank == 6
        assert np.all(penalty.values[-2:, :] == 0.0) and np.all(penalty.values[:, -2:] == 0.0)
        assert np.count_nonzero(np.diag(penalty.values)) == 6

    def test_reevaluation(self, x):
        matrix, _ = tprs_basis(x, BasisSpec(kind='tprs', k=6))
        assert np.allclose(evaluate_basis(matrix.basis, x), matrix.values)

    def test_heavy_penalty_leaves_the_least_squares_line(self):
        data = simulate('sin', 200, seed=21)
        M = assemble_design('y ~ s(x, k=10, bs=tp)', data)
        inner = pirls_fit(M, Gaussian, [np.exp(20.0)], data)
        x = data.numeric('x')
        line = np.polynomial.polynomial.polyfit(x, data.y, 1)
        assert np.abs(inner.mu - np.polynomial.polynomial.polyval(x, line)).max() < 1e-6

    def test_single_value(self):
        with raises(BasisRankError):
            tprs_basis(np.full(10, 3.0), BasisSpec(kind='tprs', k=5))

    def test_too_few_unique_values(self):
        with raises(BasisDimensionError):
            tprs_basis(np.arange(4.0), BasisSpec(kind='tprs', k=5))


class TestConstraint:
    def test_columns_sum_to_zero(self, x):
        matrix = bspline_basis(x, BasisSpec(k=10))
        penalty = bspline_penalty(matrix.spec)
        constrained, reduced, transform = absorb_constraint(matrix, penalty)
        assert constrained.values.shape == (200, 9)
        assert np.abs(constrained.values.sum(axis=0)).max() < 1e-10
        assert np.allclose(transform.Z.T @ transform.Z, np.eye(9))
        assert reduced.values.shape == (9, 9)
        assert reduced.rank == 8

    def test_constant_removed_from_span(self, x):
        constrained, _, _ = absorb_constraint(bspline_basis(x, BasisSpec(k=8)))
        _, residual, *_ = np.linalg.lstsq(constrained.values, np.ones(x.size), rcond=None)
        assert residual[0] > 0.5 * x.size

    def test_already_centred_is_identity(self):
        values = np.array([[1.0, -1.0], [-1.0, 1.0], [0.0, 0.0]])
        with warns(UserWarning):
            constrained, _, transform = absorb_constraint(values)
        assert transform.is_identity
        assert np.allclose(constrained.values, values)

    def test_second_absorption_changes_nothing(self, x):
        matrix = bspline_basis(x, BasisSpec(k=9))
        once, penalty, _ = absorb_constraint(matrix, bspline_penalty(matrix.spec))
        with warns(UserWarning):
            twice, again, transform = absorb_constraint(once, penalty)
        assert transform.is_identity
        assert np.allclose(twice.values, once.values, rtol=0.0, atol=1e-14)
        assert np.allclose(again.values, penalty.values, rtol=0.0, atol=1e-14 * np.abs(penalty.values).max())
        assert again.rank == penalty.rank
        assert np.allclose(evaluate_basis(twice.basis, x), once.values)

    def test_constrained_evaluation(self, x):
        constrained, _, _ = absorb_constraint(bspline_basis(x, BasisSpec(k=7)))
        assert np.allclose(evaluate_basis(constrained.basis, x), constrained.values)
        assert constrained.basis.dim == 6

    def test_single_column(self):
        with raises(BasisDimensionError):
            absorb_constraint(np.ones((5, 1)))


class TestEvaluate:
    def test_extrapolation(self, x):
        matrix = bspline_basis(x, BasisSpec(k=6).on('day'))
        with raises(ExtrapolationError) as e:
            evaluate_basis(matrix.basis, np.array([x.max() + 1.0]))
        assert e.value.column == 'day'
        assert e.value.EXIT_CODE == 3

    def test_clamp(self, x):
        matrix = bspline_basis(x, BasisSpec(k=6))
        clamped = evaluate_basis(matrix.basis, np.array([x.min() - 5.0, x.max() + 5.0]), clamp=True)
        assert np.allclose(clamped, matrix.values[[0, -1]])

    def test_indicator(self):
        matrix, penalty = indicator_basis(np.array([0, 2, 1, 2]), 3, 'cow')
        assert matrix.values.tolist() == [[1, 0, 0], [0, 0, 1], [0, 1, 0], [0, 0, 1]]
        assert np.allclose(penalty.values, np.eye(3))
        assert np.allclose(evaluate_basis(matrix.basis, np.array([1.0])), [[0, 1, 0]])

    def test_penalty_quadratic_form(self):
        penalty = PenaltyMatrix(np.diag([2.0, 0.0]), 1)
        assert penalty.quadratic_form(np.array([3.0, 5.0])) == 18.0
