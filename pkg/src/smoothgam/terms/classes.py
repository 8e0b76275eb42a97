import logging
from typing import Any, ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np
from attr import asdict, attrib, attrs

from . import traits
from ..basis import (BSPLINE, TPRS, BasisMatrix, BasisSpec, PenaltyMatrix, SmoothBasis, absorb_constraint,
                     bspline_basis, bspline_penalty, evaluate_basis, indicator_basis, penalty_null_space, tprs_basis)
from ..data import Dataset
from ..errors import DomainError, SpecificationError

logger = logging.getLogger(__name__)


@attrs(auto_attribs=True, frozen=True, eq=False)
class PenaltyBlock(object):
    """One penalty matrix acting on columns ``start:stop``; blocks sharing a `group` share one smoothing parameter."""
    start: int
    stop: int
    matrix: np.ndarray
    group: str
    rank: int

    def shifted(self, offset: int) -> 'PenaltyBlock':
        return PenaltyBlock(self.start + offset, self.stop + offset, self.matrix, self.group, self.rank)

    def scaled(self, factor: float) -> 'PenaltyBlock':
        return PenaltyBlock(self.start, self.stop, self.matrix * factor, self.group, self.rank)


@attrs(auto_attribs=True, frozen=True, eq=False)
class FittedTerm(object):
    """A term after it has seen the training data.

    Attributes:
        term: The term specification.
        n_columns: Width of the term's design block.
        penalties: Penalty blocks, positioned relative to the start of the block.
        state: Whatever the term needs to rebuild its block on new data: bases, level orders, transforms.
        k_basis: Per-smooth basis dimension before identifiability constraints.
        k_used: Per-smooth dimension after them.
    """
    term: 'Term'
    n_columns: int
    penalties: Tuple[PenaltyBlock, ...] = ()
    state: Dict[str, Any] = attrib(factory=dict)
    k_basis: int = 0
    k_used: int = 0

    @property
    def label(self) -> str:
        return self.term.label

    def design(self, data: Dataset, clamp: bool = False) -> np.ndarray:
        return self.term.design(self, data, clamp)

    def to_dict(self) -> dict:
        return {
            'term': self.term.to_dict(),
            'n_columns': self.n_columns,
            'k_basis': self.k_basis,
            'k_used': self.k_used,
            'state': {key: _encode(value) for key, value in self.state.items()},
        }

    @classmethod
    def from_dict(cls, payload: dict) -> 'FittedTerm':
        return cls(
            term=Term.from_dict(payload['term']),
            n_columns=int(payload['n_columns']),
            state={key: _decode(value) for key, value in payload['state'].items()},
            k_basis=int(payload['k_basis']),
            k_used=int(payload['k_used']),
        )


def _encode(value):
    if isinstance(value, SmoothBasis):
        return {'__basis__': value.to_dict()}
    if isinstance(value, np.ndarray):
        return {'__array__': value.tolist()}
    if isinstance(value, (list, tuple)):
        return [_encode(item) for item in value]
    return value


def _decode(value):
    if isinstance(value, dict):
        if '__basis__' in value:
            return SmoothBasis.from_dict(value['__basis__'])
        if '__array__' in value:
            return np.asarray(value['__array__'], dtype=float)
    if isinstance(value, list):
        return tuple(_decode(item) for item in value)
    return value


def level_codes(data: Dataset, name: str, levels: Sequence[str]) -> np.ndarray:
    """Codes of `data`'s factor `name` relative to the training level order `levels`."""
    column = data.factor(name)
    lookup = {level: code for code, level in enumerate(levels)}
    try:
        mapping = np.array([lookup[level] for level in column.levels], dtype=int)
    except KeyError as e:
        raise SpecificationError(f'Level {e.args[0]!r} was not present when the model was fitted',
                                 column=name) from None
    return mapping[column.values] if column.values.size else column.values.astype(int)


def _factor_levels(data: Dataset, name: str, label: str, minimum: int = 2) -> Tuple[np.ndarray, Tuple[str, ...]]:
    column = data.factor(name)
    if len(column.levels) < minimum:
        raise SpecificationError(f'Factor needs at least {minimum} levels, found {len(column.levels)}',
                                 column=name, term=label)
    return column.values, column.levels


def _raw_basis(x: np.ndarray, kind: str, k: int, covariate: str) -> Tuple[BasisMatrix, PenaltyMatrix]:
    spec = BasisSpec(kind=kind, k=k, covariate_name=covariate)
    if kind == TPRS:
        return tprs_basis(x, spec)
    basis = bspline_basis(x, spec)
    return basis, bspline_penalty(basis.spec)


def _level_blocks(values: np.ndarray, codes: np.ndarray, n_levels: int, transforms=None) -> np.ndarray:
    width = values.shape[1] if transforms is None else transforms[0].shape[1]
    out = np.zeros((values.shape[0], n_levels * width))
    for level in range(n_levels):
        rows = codes == level
        block = values[rows] if transforms is None else values[rows] @ transforms[level]
        out[rows, level * width:(level + 1) * width] = block
    return out


def sum_to_zero_contrast(n_levels: int) -> np.ndarray:
    """Orthonormal columns spanning the vectors over `n_levels` levels that sum to zero."""
    q, _ = np.linalg.qr(np.ones((n_levels, 1)), mode='complete')
    return q[:, 1:]


@attrs(auto_attribs=True, frozen=True, order=False)
class Term(object):
    """Base class for all model terms."""
    KIND: ClassVar[str] = ''
    PENALIZED: ClassVar[bool] = False
    UNIVARIATE_SMOOTH: ClassVar[bool] = False

    @property
    def label(self) -> str:
        raise NotImplementedError

    @property
    def columns(self) -> Tuple[str, ...]:
        """Data columns this term reads."""
        return ()

    @property
    def factor_columns(self) -> Tuple[str, ...]:
        return ()

    def setup(self, data: Dataset) -> FittedTerm:
        raise NotImplementedError

    def design(self, fitted: FittedTerm, data: Dataset, clamp: bool = False) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {'kind': self.KIND, **asdict(self)}

    @staticmethod
    def from_dict(payload: dict) -> 'Term':
        payload = dict(payload)
        cls = TERM_CLASSES[payload.pop('kind')]
        if 'factors' in payload:
            payload['factors'] = tuple(payload['factors'])
        return cls(**payload)


@attrs(auto_attribs=True, frozen=True, order=False)
class InterceptTerm(Term):
    KIND = 'intercept'

    @property
    def label(self):
        return '(Intercept)'

    def setup(self, data):
        return FittedTerm(self, 1, k_basis=1, k_used=1)

    def design(self, fitted, data, clamp=False):
        return np.ones((data.n_rows, 1))


@attrs(auto_attribs=True, frozen=True, order=False)
class LinearTerm(Term, traits.Covariate, traits.Transformed):
    """A numeric covariate entering the predictor linearly, optionally as its logarithm."""
    KIND = 'linear'

    @property
    def label(self):
        return self.covariate if self.transform is None else f'{self.transform}({self.covariate})'

    @property
    def columns(self):
        return self.covariate,

    def values(self, data: Dataset) -> np.ndarray:
        x = data.numeric(self.covariate)
        if self.transform == 'log':
            if np.any(x <= 0):
                raise DomainError('log() needs strictly positive values', column=self.covariate, term=self.label)
            return np.log(x)
        return x

    def setup(self, data):
        self.values(data)
        return FittedTerm(self, 1, k_basis=1, k_used=1)

    def design(self, fitted, data, clamp=False):
        return self.values(data)[:, None]


@attrs(auto_attribs=True, frozen=True, order=False)
class FactorTerm(Term, traits.Covariate):
    """A parametric factor in treatment contrasts; the first level is the reference."""
    KIND = 'factor'

    @property
    def label(self):
        return self.covariate

    @property
    def columns(self):
        return self.covariate,

    @property
    def factor_columns(self):
        return self.covariate,

    def setup(self, data):
        _, levels = _factor_levels(data, self.covariate, self.label)
        return FittedTerm(self, len(levels) - 1, state={'levels': levels}, k_basis=len(levels),
                          k_used=len(levels) - 1)

    def design(self, fitted, data, clamp=False):
        levels = fitted.state['levels']
        codes = level_codes(data, self.covariate, levels)
        out = np.zeros((data.n_rows, len(levels) - 1))
        rows = np.flatnonzero(codes > 0)
        out[rows, codes[rows] - 1] = 1.0
        return out


@attrs(auto_attribs=True, frozen=True, order=False)
class SmoothTerm(Term, traits.Covariate, traits.Basis):
    """``s(x)``: one sum-to-zero constrained smooth with its own smoothing parameter."""
    KIND = 'smooth'
    PENALIZED = True
    UNIVARIATE_SMOOTH = True

    @property
    def label(self):
        return f's({self.covariate})'

    @property
    def columns(self):
        return self.covariate,

    def setup(self, data):
        raw, penalty = _raw_basis(data.numeric(self.covariate), self.basis_kind, self.k_used + 1, self.covariate)
        constrained, penalty, _ = absorb_constraint(raw, penalty)
        return FittedTerm(self, self.k_used, (PenaltyBlock(0, self.k_used, penalty.values, self.label, penalty.rank),),
                          {'basis': constrained.basis}, self.k_used + 1, self.k_used)

    def design(self, fitted, data, clamp=False):
        return evaluate_basis(fitted.state['basis'], data.numeric(self.covariate), clamp)


@attrs(auto_attribs=True, frozen=True, order=False)
class BySmoothTerm(Term, traits.Covariate, traits.Grouped, traits.Basis):
    """``s(x, by=f)``: one constrained smooth per level, each with its own smoothing parameter."""
    KIND = 'by_smooth'
    PENALIZED = True
    UNIVARIATE_SMOOTH = True

    @property
    def label(self):
        return f's({self.covariate},by={self.factor})'

    @property
    def columns(self):
        return self.covariate, self.factor

    @property
    def factor_columns(self):
        return self.factor,

    def setup(self, data):
        codes, levels = _factor_levels(data, self.factor, self.label)
        raw, penalty = _raw_basis(data.numeric(self.covariate), self.basis_kind, self.k_used + 1, self.covariate)
        transforms, penalties = [], []
        for code, level in enumerate(levels):
            if not np.any(codes == code):
                raise SpecificationError(f'Level {level!r} has no observations',
                                         column=self.factor, term=self.label)
            _, level_penalty, constraint = absorb_constraint(raw.values[codes == code], penalty)
            transforms.append(constraint.Z)
            start = code * self.k_used
            penalties.append(PenaltyBlock(start, start + self.k_used, level_penalty.values,
                                          f'{self.label}[{level}]', level_penalty.rank))
        return FittedTerm(self, len(levels) * self.k_used, tuple(penalties),
                          {'basis': raw.basis, 'levels': levels, 'transforms': tuple(transforms)},
                          self.k_used + 1, self.k_used)

    def design(self, fitted, data, clamp=False):
        levels = fitted.state['levels']
        raw = evaluate_basis(fitted.state['basis'], data.numeric(self.covariate), clamp)
        return _level_blocks(raw, level_codes(data, self.factor, levels), len(levels), fitted.state['transforms'])


@attrs(auto_attribs=True, frozen=True, order=False)
class ConstrainedInteractionTerm(Term, traits.Covariate, traits.Grouped, traits.Basis):
    """``sz(x, f1, ...)``: per-level deviations from an average smooth.

    Each level's smooth is sum-to-zero constrained; in addition the coefficients of every basis function sum to
    zero over the levels of each factor, reparameterized through an orthonormal contrast so that no level is
    singled out. All deviations share one smoothing parameter.
    """
    KIND = 'constrained_interaction'
    PENALIZED = True

    @property
    def label(self):
        return f'sz({self.covariate},{",".join(self.factors)})'

    @property
    def columns(self):
        return (self.covariate, *self.factors)

    @property
    def factor_columns(self):
        return self.factors

    @staticmethod
    def _rows(basis_rows: np.ndarray, contrast: np.ndarray, combined: np.ndarray) -> np.ndarray:
        return (contrast[combined][:, :, None] * basis_rows[:, None, :]).reshape(basis_rows.shape[0], -1)

    def _combined(self, data: Dataset, levels) -> np.ndarray:
        codes = [level_codes(data, name, level_set) for name, level_set in zip(self.factors, levels)]
        return np.ravel_multi_index(codes, [len(level_set) for level_set in levels])

    def setup(self, data):
        levels = tuple(_factor_levels(data, name, self.label)[1] for name in self.factors)
        raw, penalty = _raw_basis(data.numeric(self.covariate), self.basis_kind, self.k_used + 1, self.covariate)
        constrained, penalty, _ = absorb_constraint(raw, penalty)
        contrast = np.ones((1, 1))
        for level_set in levels:
            contrast = np.kron(contrast, sum_to_zero_contrast(len(level_set)))
        n_deviations = contrast.shape[1]
        width = n_deviations * self.k_used
        block = PenaltyBlock(0, width, np.kron(np.eye(n_deviations), penalty.values), self.label,
                             n_deviations * penalty.rank)
        return FittedTerm(self, width, (block,),
                          {'basis': constrained.basis, 'levels': levels, 'contrast': contrast},
                          self.k_used + 1, self.k_used)

    def design(self, fitted, data, clamp=False):
        rows = evaluate_basis(fitted.state['basis'], data.numeric(self.covariate), clamp)
        return self._rows(rows, np.asarray(fitted.state['contrast']), self._combined(data, fitted.state['levels']))


@attrs(auto_attribs=True, frozen=True, order=False)
class RandomSmoothTerm(Term, traits.Covariate, traits.Grouped, traits.Basis):
    """``fs(x, f)``: unconstrained per-level smooths sharing one wiggliness smoothing parameter, with the penalty
    null space of every level ridge-penalized under a second shared parameter, so that the term is fully
    penalized."""
    KIND = 'random_smooth'
    PENALIZED = True
    DEFAULT_BS = BSPLINE

    @property
    def label(self):
        return f'fs({self.covariate},{self.factor})'

    @property
    def columns(self):
        return self.covariate, self.factor

    @property
    def factor_columns(self):
        return self.factor,

    def setup(self, data):
        codes, levels = _factor_levels(data, self.factor, self.label)
        raw, penalty = _raw_basis(data.numeric(self.covariate), self.basis_kind, self.k_used, self.covariate)
        null_space = penalty_null_space(penalty)
        ridge = null_space @ null_space.T
        penalties = []
        for code in range(len(levels)):
            start, stop = code * self.k_used, (code + 1) * self.k_used
            penalties.append(PenaltyBlock(start, stop, penalty.values, f'{self.label}:wiggly', penalty.rank))
            penalties.append(PenaltyBlock(start, stop, ridge, f'{self.label}:null', penalty.null_space_dim))
        return FittedTerm(self, len(levels) * self.k_used, tuple(penalties),
                          {'basis': raw.basis, 'levels': levels}, self.k_used, self.k_used)

    def design(self, fitted, data, clamp=False):
        levels = fitted.state['levels']
        raw = evaluate_basis(fitted.state['basis'], data.numeric(self.covariate), clamp)
        return _level_blocks(raw, level_codes(data, self.factor, levels), len(levels))


@attrs(auto_attribs=True, frozen=True, order=False)
class RandomInterceptTerm(Term, traits.Covariate):
    """``ri(f)``: iid Gaussian random intercepts as level indicators under an identity penalty."""
    KIND = 'random_intercept'
    PENALIZED = True

    @property
    def label(self):
        return f'ri({self.covariate})'

    @property
    def columns(self):
        return self.covariate,

    @property
    def factor_columns(self):
        return self.covariate,

    def setup(self, data):
        codes, levels = _factor_levels(data, self.covariate, self.label, minimum=1)
        _, penalty = indicator_basis(codes, len(levels), self.covariate)
        return FittedTerm(self, len(levels), (PenaltyBlock(0, len(levels), penalty.values, self.label, penalty.rank),),
                          {'levels': levels}, len(levels), len(levels))

    def design(self, fitted, data, clamp=False):
        levels = fitted.state['levels']
        basis, _ = indicator_basis(level_codes(data, self.covariate, levels), len(levels), self.covariate)
        return np.array(basis.values)


TERM_CLASSES: Dict[str, type] = {
    cls.KIND: cls for cls in (InterceptTerm, LinearTerm, FactorTerm, SmoothTerm, BySmoothTerm,
                              ConstrainedInteractionTerm, RandomSmoothTerm, RandomInterceptTerm)
}

__all__ = ['PenaltyBlock', 'FittedTerm', 'Term', 'InterceptTerm', 'LinearTerm', 'FactorTerm', 'SmoothTerm',
           'BySmoothTerm', 'ConstrainedInteractionTerm', 'RandomSmoothTerm', 'RandomInterceptTerm', 'TERM_CLASSES',
           'level_codes', 'sum_to_zero_contrast']
