"""Assembly of the full model matrix and its penalty blocks from a list of terms."""
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from attr import attrib, attrs

from .data import Dataset
from .errors import BasisDimensionError, BasisRankError, RequestError, SpecificationError
from .formula import parse_formula, resolve_terms
from .terms.classes import FittedTerm, PenaltyBlock, Term

logger = logging.getLogger(__name__)


@attrs(auto_attribs=True, frozen=True, eq=False)
class ModelMatrices(object):
    """The full design and its penalties.

    Attributes:
        X: n × P design, parametric columns and every smooth block side by side.
        penalties: Penalty blocks in global column coordinates, already rescaled.
        groups: Smoothing-parameter groups in order; one λ each.
        term_index: Column range of each term label.
        fitted_terms: The terms with the state needed to rebuild rows on new data.
        penalty_scales: The factor each group's penalties were multiplied by.
    """
    X: np.ndarray
    penalties: Tuple[PenaltyBlock, ...]
    groups: Tuple[str, ...]
    term_index: Dict[str, Tuple[int, int]]
    fitted_terms: Tuple[FittedTerm, ...]
    penalty_scales: Dict[str, float] = attrib(factory=dict)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def P(self) -> int:
        return self.X.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def group_index(self, group: str) -> int:
        return self.groups.index(group)

    def penalty_sum(self, lambdas: Sequence[float]) -> np.ndarray:
        """Σ_j λ_j S_j over all blocks, as a P × P matrix."""
        lambdas = np.asarray(lambdas, dtype=float)
        total = np.zeros((self.P, self.P))
        lookup = {group: position for position, group in enumerate(self.groups)}
        for block in self.penalties:
            total[block.start:block.stop, block.start:block.stop] += lambdas[lookup[block.group]] * block.matrix
        return total

    def group_penalty(self, group: str) -> np.ndarray:
        total = np.zeros((self.P, self.P))
        for block in self.penalties:
            if block.group == group:
                total[block.start:block.stop, block.start:block.stop] += block.matrix
        return total

    @property
    def null_space_dim(self) -> int:
        """Dimension of the unpenalized space: P minus the rank of all penalties summed at unit weight."""
        if not self.penalties:
            return self.P
        total = self.penalty_sum(np.ones(self.n_groups))
        eigenvalues = np.linalg.eigvalsh(total)
        return int(np.sum(eigenvalues <= 1e-9 * max(eigenvalues.max(), 1e-300)))

    def term(self, label: str) -> FittedTerm:
        for fitted in self.fitted_terms:
            if fitted.label == label:
                return fitted
        raise RequestError(f'Unknown term {label!r}', term=label)


def _scale(X_block: np.ndarray, S: np.ndarray) -> float:
    # Squared infinity norm of the block over the one-norm of its penalty.
    norm_s = np.abs(S).sum(axis=0).max()
    if norm_s <= 0:
        return 1.0
    return float(np.abs(X_block).sum(axis=1).max() ** 2 / norm_s)


def assemble_design(terms: Union[str, Iterable[Term]], data: Dataset) -> ModelMatrices:
    """Compile `terms` against `data` into the model matrix and penalty list.

    Penalties of each group are rescaled by ``‖X_t‖∞² / ‖S_g‖₁`` computed on the term's block, so that
    differently scaled covariates share one sensible range of log smoothing parameters. An indicator block under
    an identity penalty keeps a scale of exactly 1.

    Raises:
        BasisDimensionError: A covariate cannot support the requested basis; the error names the term.
        SpecificationError: More or fewer than one intercept, or a factor unusable for its term.
    """
    if isinstance(terms, str):
        terms = parse_formula(terms, data)
    terms = resolve_terms(list(terms), data)
    intercepts = sum(term.KIND == 'intercept' for term in terms)
    if intercepts != 1:
        raise SpecificationError(f'A model needs exactly one intercept term, found {intercepts}')

    blocks: List[np.ndarray] = []
    penalties: List[PenaltyBlock] = []
    groups: Dict[str, None] = {}
    term_index: Dict[str, Tuple[int, int]] = {}
    fitted_terms: List[FittedTerm] = []
    scales: Dict[str, float] = {}
    offset = 0
    for term in terms:
        if term.label in term_index:
            raise SpecificationError('Duplicate term', term=term.label)
        try:
            fitted = term.setup(data)
            block = fitted.design(data)
        except (BasisDimensionError, BasisRankError) as e:
            raise type(e)(e.message, column=e.column, term=term.label) from e
        if block.shape != (data.n_rows, fitted.n_columns):
            raise SpecificationError(f'Block has shape {block.shape}, expected {(data.n_rows, fitted.n_columns)}',
                                     term=term.label)
        term_groups: Dict[str, List[PenaltyBlock]] = {}
        for penalty in fitted.penalties:
            term_groups.setdefault(penalty.group, []).append(penalty)
        for group, members in term_groups.items():
            local = np.zeros((fitted.n_columns, fitted.n_columns))
            for member in members:
                local[member.start:member.stop, member.start:member.stop] += member.matrix
            scales[group] = _scale(block, local)
            groups[group] = None
            penalties.extend(member.scaled(scales[group]).shifted(offset) for member in members)
        blocks.append(block)
        term_index[term.label] = (offset, offset + fitted.n_columns)
        fitted_terms.append(fitted)
        offset += fitted.n_columns

    X = np.hstack(blocks) if blocks else np.zeros((data.n_rows, 0))
    logger.debug('Assembled %d x %d design with %d penalty blocks in %d groups', *X.shape, len(penalties),
                 len(groups))
    return ModelMatrices(X, tuple(penalties), tuple(groups), term_index, tuple(fitted_terms), scales)


def design_matrix(fitted_terms: Sequence[FittedTerm], data: Dataset, exclude: Iterable[str] = (),
                  clamp: bool = False) -> np.ndarray:
    """Rows of the model matrix for new data, with the columns of excluded terms set to zero.

    Excluded terms are never evaluated, so the columns they would read may hold placeholder values.

    Raises:
        RequestError: `exclude` names a term that is not in the model.
    """
    exclude = set(normalize_labels(exclude, fitted_terms))
    blocks = []
    for fitted in fitted_terms:
        if fitted.label in exclude:
            blocks.append(np.zeros((data.n_rows, fitted.n_columns)))
        else:
            blocks.append(fitted.design(data, clamp))
    return np.hstack(blocks) if blocks else np.zeros((data.n_rows, 0))


def normalize_labels(labels: Iterable[str], fitted_terms: Sequence[FittedTerm]) -> List[str]:
    """Match user-written term labels to model labels, ignoring whitespace.

    Raises:
        RequestError: A label matches no term.
    """
    known = {fitted.label.replace(' ', ''): fitted.label for fitted in fitted_terms}
    out = []
    for label in labels:
        key = label.replace(' ', '')
        if key not in known:
            raise RequestError(f'Unknown term {label!r}; model terms are {sorted(known.values())}', term=label)
        out.append(known[key])
    return out


__all__ = ['ModelMatrices', 'assemble_design', 'design_matrix', 'normalize_labels']
