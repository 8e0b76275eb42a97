"""Spline bases, their wiggliness penalties and sum-to-zero constraint transforms.

Everything here is a pure function of its inputs. A constructed basis is captured by a :class:`SmoothBasis`, which
remembers what is needed to evaluate the same functions at new covariate values.
"""
import logging
from typing import ClassVar, Optional, Sequence, Tuple, TypeVar, Union
from warnings import warn

import numpy as np
from attr import attrib, attrs, evolve

from .errors import BasisDimensionError, BasisRankError, ExtrapolationError, UnsupportedPenaltyError

logger = logging.getLogger(__name__)

T = TypeVar('T')

BSPLINE = 'bspline'
TPRS = 'tprs'
RANDOM_INTERCEPT = 'random_intercept'


def _optional_tuple(value):
    return None if value is None else tuple(float(v) for v in value)


@attrs(auto_attribs=True, frozen=True, order=False)
class BasisSpec(object):
    """What basis to build for one covariate.

    `k` is the basis dimension before any constraint is absorbed. For B-splines `knots` is the full clamped knot
    vector of length ``k + degree + 1``; it is filled in by :func:`resolve_knots` when left empty. For TPRS it holds
    the unique covariate values the radial basis is centred on.

    Examples:
        >>> BasisSpec().on('day').with_k(10).kind
        'bspline'
        >>> BasisSpec(kind='tprs').with_k(2).validate()
        Traceback (most recent call last):
        ...
        smoothgam.errors.BasisDimensionError: tprs bases need k >= 3, got k=2
    """
    KINDS: ClassVar[Tuple[str, ...]] = (BSPLINE, TPRS, RANDOM_INTERCEPT)

    kind: str = BSPLINE
    k: int = 10
    degree: int = 3
    covariate_name: str = ''
    knots: Optional[Tuple[float, ...]] = attrib(default=None, converter=_optional_tuple)

    def with_k(self: T, k: int) -> T:
        return evolve(self, k=int(k))

    def with_degree(self: T, degree: int) -> T:
        return evolve(self, degree=int(degree))

    def with_knots(self: T, knots: Optional[Sequence[float]]) -> T:
        return evolve(self, knots=knots)

    def with_kind(self: T, kind: str) -> T:
        return evolve(self, kind=kind)

    def on(self: T, covariate_name: str) -> T:
        return evolve(self, covariate_name=covariate_name)

    def validate(self) -> 'BasisSpec':
        if self.kind not in self.KINDS:
            raise BasisDimensionError(f'Unknown basis kind {self.kind!r}')
        if self.kind == BSPLINE:
            if self.degree < 1:
                raise BasisDimensionError(f'B-spline degree must be positive, got {self.degree}')
            if self.k < self.degree + 2:
                raise BasisDimensionError(f'bspline bases of degree {self.degree} need k >= {self.degree + 2}, '
                                          f'got k={self.k}')
            if self.knots is not None:
                knots = np.asarray(self.knots)
                if knots.size != self.k + self.degree + 1:
                    raise BasisDimensionError(f'Expected {self.k + self.degree + 1} knots for k={self.k}, '
                                              f'got {knots.size}')
                if np.any(np.diff(knots) < 0):
                    raise BasisDimensionError('Knots must be non-decreasing')
        elif self.kind == TPRS:
            if self.k < 3:
                raise BasisDimensionError(f'tprs bases need k >= 3, got k={self.k}')
        elif self.k < 1:
            raise BasisDimensionError(f'random_intercept bases need at least one level, got k={self.k}')
        return self

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'k': self.k,
            'degree': self.degree,
            'covariate_name': self.covariate_name,
            'knots': None if self.knots is None else list(self.knots),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> 'BasisSpec':
        return cls(**payload)


def _as_array(values) -> np.ndarray:
    array = np.array(values, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@attrs(auto_attribs=True, frozen=True, eq=False)
class PenaltyMatrix(object):
    """A symmetric positive semi-definite penalty with its known rank."""
    values: np.ndarray = attrib(converter=_as_array)
    rank: int

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def null_space_dim(self) -> int:
        return self.dim - self.rank

    def quadratic_form(self, beta: np.ndarray) -> float:
        return float(beta @ self.values @ beta)


@attrs(auto_attribs=True, frozen=True, eq=False)
class ConstraintTransform(object):
    """Maps constrained coefficients to the unconstrained basis; `Z` has orthonormal columns."""
    Z: np.ndarray = attrib(converter=_as_array)

    @property
    def is_identity(self) -> bool:
        return self.Z.shape[0] == self.Z.shape[1]

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        return matrix @ self.Z


@attrs(auto_attribs=True, frozen=True, eq=False)
class SmoothBasis(object):
    """Everything needed to re-evaluate a constructed basis.

    Attributes:
        spec: The spec with its knots resolved.
        support: The covariate range the basis was built on.
        projection: TPRS only; maps radial-basis evaluations at the unique training values onto the retained
            eigenvectors.
        constraint: The absorbed constraint, if any.
    """
    spec: BasisSpec
    support: Tuple[float, float]
    projection: Optional[np.ndarray] = attrib(default=None, converter=lambda v: None if v is None else _as_array(v))
    constraint: Optional[ConstraintTransform] = None

    @property
    def dim(self) -> int:
        if self.constraint is not None:
            return self.constraint.Z.shape[1]
        return self.spec.k

    def with_constraint(self, constraint: Optional[ConstraintTransform]) -> 'SmoothBasis':
        return evolve(self, constraint=constraint)

    def evaluate(self, x: np.ndarray, clamp: bool = False) -> np.ndarray:
        return evaluate_basis(self, x, clamp=clamp)

    def to_dict(self) -> dict:
        return {
            'spec': self.spec.to_dict(),
            'support': list(self.support),
            'projection': None if self.projection is None else self.projection.tolist(),
            'constraint': None if self.constraint is None else self.constraint.Z.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> 'SmoothBasis':
        constraint = payload.get('constraint')
        return cls(
            spec=BasisSpec.from_dict(payload['spec']),
            support=tuple(payload['support']),
            projection=payload.get('projection'),
            constraint=None if constraint is None else ConstraintTransform(np.asarray(constraint, dtype=float)),
        )


@attrs(auto_attribs=True, frozen=True, eq=False)
class BasisMatrix(object):
    """Basis-function evaluations, one row per covariate value."""
    values: np.ndarray = attrib(converter=_as_array)
    basis: SmoothBasis

    @property
    def spec(self) -> BasisSpec:
        return self.basis.spec


def _safe_ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    """Elementwise division where a zero denominator yields zero; repeated knots make 0/0 terms vanish."""
    out = np.zeros(np.broadcast(numerator, denominator).shape)
    np.divide(numerator, denominator, out=out, where=denominator != 0)
    return out


def _cox_de_boor(x: np.ndarray, t: np.ndarray, degree: int, spans: Tuple[int, int]) -> np.ndarray:
    # Degree-zero indicators; the right boundary belongs to the last non-empty span.
    n_spans = t.size - 1
    span = np.clip(np.searchsorted(t, x, side='right') - 1, *spans)
    basis = np.zeros((x.size, n_spans))
    basis[np.arange(x.size), span] = 1.0
    for p in range(1, degree + 1):
        n_funcs = t.size - p - 1
        left = _safe_ratio(x[:, None] - t[None, :n_funcs], (t[p:p + n_funcs] - t[:n_funcs])[None, :])
        right = _safe_ratio(t[None, p + 1:p + 1 + n_funcs] - x[:, None],
                            (t[p + 1:p + 1 + n_funcs] - t[1:1 + n_funcs])[None, :])
        basis = left * basis[:, :n_funcs] + right * basis[:, 1:n_funcs + 1]
    return basis


def bspline_design(x: np.ndarray, knots: Sequence[float], degree: int, derivative: int = 0) -> np.ndarray:
    """Evaluate every B-spline (or its `derivative`-th derivative) on the clamped `knots` at `x`.

    Derivatives use the standard recursion on the lower-degree basis, with 0/0 terms taken as zero.
    """
    t = np.asarray(knots, dtype=float)
    x = np.asarray(x, dtype=float)
    k = t.size - degree - 1
    if derivative > degree:
        return np.zeros((x.size, k))
    basis = _cox_de_boor(x, t, degree - derivative, (degree, k - 1))
    for q in range(degree - derivative + 1, degree + 1):
        n_funcs = t.size - q - 1
        first = _safe_ratio(basis[:, :n_funcs], (t[q:q + n_funcs] - t[:n_funcs])[None, :])
        second = _safe_ratio(basis[:, 1:n_funcs + 1], (t[q + 1:q + 1 + n_funcs] - t[1:1 + n_funcs])[None, :])
        basis = q * (first - second)
    return basis


def resolve_knots(x: np.ndarray, spec: BasisSpec) -> BasisSpec:
    """Place ``k - degree - 1`` interior knots at evenly spaced type-7 quantiles of the unique `x` values, with
    ``degree + 1`` repeated boundary knots at the covariate range.

    Raises:
        BasisDimensionError: Too few unique values to give distinct knots.
    """
    spec.validate()
    if spec.knots is not None:
        return spec
    unique = np.unique(np.asarray(x, dtype=float))
    n_interior = spec.k - spec.degree - 1
    if unique.size < n_interior + 2:
        raise BasisDimensionError(f'{spec.covariate_name or "covariate"} has {unique.size} unique values, '
                                  f'a bspline basis with k={spec.k} needs at least {n_interior + 2}',
                                  column=spec.covariate_name or None)
    interior = np.quantile(unique, np.linspace(0.0, 1.0, n_interior + 2)[1:-1])
    lo, hi = unique[0], unique[-1]
    knots = np.concatenate([np.repeat(lo, spec.degree + 1), interior, np.repeat(hi, spec.degree + 1)])
    return spec.with_knots(knots)


def bspline_basis(x: np.ndarray, spec: BasisSpec) -> BasisMatrix:
    """Evaluate a B-spline basis by the Cox–de Boor recursion.

    Examples:
        >>> BasisSpec(k=4).on('x')
        BasisSpec(kind='bspline', k=4, degree=3, covariate_name='x', knots=None)
        >>> bspline_basis(np.array([0, 0.5, 1]), BasisSpec(k=4)).values[0].tolist()
        [1.0, 0.0, 0.0, 0.0]
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise BasisDimensionError('Covariate values must be finite', column=spec.covariate_name or None)
    spec = resolve_knots(x, spec)
    t = np.asarray(spec.knots)
    support = (float(t[spec.degree]), float(t[spec.k]))
    if x.size and (x.min() < support[0] or x.max() > support[1]):
        raise ExtrapolationError(f'Covariate values fall outside the knot span {support}',
                                 column=spec.covariate_name or None)
    values = bspline_design(x, t, spec.degree)
    return BasisMatrix(values, SmoothBasis(spec, support))


def bspline_penalty(spec: BasisSpec) -> PenaltyMatrix:
    """The exact Gram matrix of second derivatives over the knot span.

    Second derivatives are polynomials of degree ``degree - 2`` on each knot interval, so a ``degree``-point
    Gauss–Legendre rule integrates every product exactly, interval by interval.

    Raises:
        UnsupportedPenaltyError: `degree` is below 2.
    """
    if spec.degree < 2:
        raise UnsupportedPenaltyError(f'A second-derivative penalty needs degree >= 2, got {spec.degree}')
    if spec.knots is None:
        raise BasisDimensionError('Knots must be resolved before building the penalty',
                                  column=spec.covariate_name or None)
    t = np.asarray(spec.knots)
    nodes, node_weights = np.polynomial.legendre.leggauss(spec.degree)
    gram = np.zeros((spec.k, spec.k))
    for a, b in zip(t[:-1], t[1:]):
        if b <= a:
            continue
        half = (b - a) / 2.0
        points = a + half * (nodes + 1.0)
        second = bspline_design(points, t, spec.degree, derivative=2)
        gram += half * (second.T * node_weights) @ second
    gram = (gram + gram.T) / 2.0
    return PenaltyMatrix(gram, spec.k - 2)


def _radial(x: np.ndarray, centres: np.ndarray) -> np.ndarray:
    return np.abs(x[:, None] - centres[None, :]) ** 3 / 12.0


def tprs_basis(x: np.ndarray, spec: BasisSpec) -> Tuple[BasisMatrix, PenaltyMatrix]:
    """A low-rank thin plate regression spline basis for one covariate.

    The full radial basis on the unique values is restricted to the complement of the {1, x} null space and
    truncated to its ``k - 2`` dominant eigenvectors; the null-space columns 1 and x are appended. The penalty is
    the diagonal of retained eigenvalues, zero on the null space.

    Raises:
        BasisRankError: The covariate takes a single value.
        BasisDimensionError: Fewer unique values than `k`.
    """
    spec = spec.validate()
    x = np.asarray(x, dtype=float)
    unique = np.unique(x)
    if unique.size < 2:
        raise BasisRankError('A thin plate basis needs at least two distinct covariate values',
                             column=spec.covariate_name or None)
    if unique.size < spec.k:
        raise BasisDimensionError(f'{spec.covariate_name or "covariate"} has {unique.size} unique values, '
                                  f'a tprs basis with k={spec.k} needs at least {spec.k}',
                                  column=spec.covariate_name or None)
    null_space = np.column_stack([np.ones(unique.size), unique])
    q, _ = np.linalg.qr(null_space, mode='complete')
    complement = q[:, 2:]
    radial = _radial(unique, unique)
    reduced = complement.T @ radial @ complement
    eigenvalues, eigenvectors = np.linalg.eigh((reduced + reduced.T) / 2.0)
    order = np.argsort(-np.abs(eigenvalues), kind='stable')[:spec.k - 2]
    projection = complement @ eigenvectors[:, order]
    penalty = np.zeros((spec.k, spec.k))
    penalty[np.arange(spec.k - 2), np.arange(spec.k - 2)] = eigenvalues[order]
    basis = SmoothBasis(spec.with_knots(unique), (float(unique[0]), float(unique[-1])), projection)
    logger.debug('tprs basis for %s keeps %d of %d radial components', spec.covariate_name, spec.k - 2,
                 unique.size - 2)
    return BasisMatrix(_tprs_rows(basis, x), basis), PenaltyMatrix(penalty, spec.k - 2)


def _tprs_rows(basis: SmoothBasis, x: np.ndarray) -> np.ndarray:
    centres = np.asarray(basis.spec.knots)
    return np.column_stack([_radial(x, centres) @ basis.projection, np.ones(x.size), x])


def indicator_basis(codes: np.ndarray, n_levels: int, covariate_name: str = '') -> Tuple[BasisMatrix, PenaltyMatrix]:
    """Level indicators with an identity penalty: an iid Gaussian random intercept written as a ridge smooth."""
    codes = np.asarray(codes, dtype=int)
    spec = BasisSpec(kind=RANDOM_INTERCEPT, k=n_levels, degree=0, covariate_name=covariate_name).validate()
    values = np.zeros((codes.size, n_levels))
    values[np.arange(codes.size), codes] = 1.0
    return BasisMatrix(values, SmoothBasis(spec, (0.0, float(n_levels - 1)))), PenaltyMatrix(np.eye(n_levels),
                                                                                             n_levels)


def _values(matrix: Union[BasisMatrix, PenaltyMatrix, np.ndarray]) -> np.ndarray:
    return np.asarray(getattr(matrix, 'values', matrix), dtype=float)


def absorb_constraint(B: Union[BasisMatrix, np.ndarray], S: Union[PenaltyMatrix, np.ndarray, None] = None,
                      ) -> Tuple[BasisMatrix, Optional[PenaltyMatrix], ConstraintTransform]:
    """Absorb the sum-to-zero constraint over the observed rows into the basis.

    `Z` spans the null space of the column sums of `B`, found from a complete QR decomposition of their
    transpose. Returns ``B @ Z``, ``Z.T @ S @ Z`` and the transform. When the column sums already vanish the
    identity is returned with a warning, which makes the operation idempotent.

    Examples:
        >>> _, _, c = absorb_constraint(np.array([[1.0, 1.0], [1.0, -1.0]]))
        >>> np.abs(c.Z).ravel().tolist()
        [0.0, 1.0]
    """
    values = _values(B)
    if values.shape[1] < 2:
        raise BasisDimensionError('A sum-to-zero constraint needs at least two basis columns')
    sums = values.sum(axis=0)
    if np.linalg.norm(sums) <= 1e-10 * max(np.abs(values).sum(), 1.0):
        warn('Basis columns already sum to zero; no constraint absorbed')
        Z = np.eye(values.shape[1])
    else:
        q, _ = np.linalg.qr(sums.reshape(-1, 1), mode='complete')
        Z = q[:, 1:]
    constraint = ConstraintTransform(Z)
    if isinstance(B, BasisMatrix):
        constrained = BasisMatrix(values @ Z, B.basis.with_constraint(
            constraint if B.basis.constraint is None else ConstraintTransform(B.basis.constraint.Z @ Z)))
    else:
        constrained = BasisMatrix(values @ Z, SmoothBasis(BasisSpec(k=values.shape[1]), (0.0, 0.0),
                                                          constraint=constraint))
    penalty = None
    if S is not None:
        reduced = Z.T @ _values(S) @ Z
        rank = S.rank if isinstance(S, PenaltyMatrix) else int(np.linalg.matrix_rank(reduced))
        penalty = PenaltyMatrix((reduced + reduced.T) / 2.0, min(rank, Z.shape[1]))
    return constrained, penalty, constraint


def penalty_null_space(S: PenaltyMatrix) -> np.ndarray:
    """Orthonormal columns spanning the null space of `S`, using its known rank."""
    eigenvalues, eigenvectors = np.linalg.eigh(S.values)
    return eigenvectors[:, np.argsort(eigenvalues, kind='stable')[:S.null_space_dim]]


def evaluate_basis(basis: SmoothBasis, x_new: np.ndarray, clamp: bool = False) -> np.ndarray:
    """Rows of the (constrained) basis at new covariate values.

    Evaluating at the training values reproduces the training block exactly.

    Raises:
        ExtrapolationError: A value lies outside the training support and `clamp` is off.
    """
    x_new = np.asarray(x_new, dtype=float)
    spec = basis.spec
    lo, hi = basis.support
    if spec.kind != RANDOM_INTERCEPT:
        outside = (x_new < lo) | (x_new > hi)
        if np.any(outside):
            if not clamp:
                first = x_new[np.flatnonzero(outside)[0]]
                raise ExtrapolationError(f'{spec.covariate_name or "covariate"}={first!r} lies outside the '
                                         f'support [{lo!r}, {hi!r}]', column=spec.covariate_name or None)
            x_new = np.clip(x_new, lo, hi)
    if spec.kind == BSPLINE:
        values = bspline_design(x_new, spec.knots, spec.degree)
    elif spec.kind == TPRS:
        values = _tprs_rows(basis, x_new)
    else:
        codes = x_new.astype(int)
        values = np.zeros((codes.size, spec.k))
        values[np.arange(codes.size), codes] = 1.0
    if basis.constraint is not None:
        values = basis.constraint.apply(values)
    return values


__all__ = ['BSPLINE', 'TPRS', 'RANDOM_INTERCEPT', 'BasisSpec', 'BasisMatrix', 'PenaltyMatrix', 'ConstraintTransform',
           'SmoothBasis', 'bspline_design', 'resolve_knots', 'bspline_basis', 'bspline_penalty', 'tprs_basis',
           'indicator_basis', 'absorb_constraint', 'penalty_null_space', 'evaluate_basis']
