"""Predictions with credible intervals, response-scale slopes and pairwise contrasts.

Everything here treats β ~ N(β̂, Vβ) and propagates uncertainty by the delta method; the smoothing parameters are
taken as fixed and known.
"""
import logging
from itertools import combinations
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, TypeVar, Union
from warnings import warn

import numpy as np
import pandas as pd
from attr import asdict, attrs, evolve
from scipy.stats import norm
from statsmodels.stats.multitest import multipletests

from .data import Column, Dataset
from .design import design_matrix, normalize_labels
from .errors import ExtrapolationError, NothingToCompareError, RequestError
from .families import IdentityLink
from .fitter import FittedModel

logger = logging.getLogger(__name__)

T = TypeVar('T')

LINK = 'link'
RESPONSE = 'response'
MEAN = 'mean'
SLOPE = 'slope'

POPULATION_CAVEAT = ('Estimates exclude the random effects and are conditional on them being zero; under a '
                     'non-identity link they should not be interpreted as population level effects.')


@attrs(auto_attribs=True, frozen=True, eq=False)
class PredictionRequest(object):
    """What to predict.

    Attributes:
        newdata: The covariate grid. Columns read only by excluded terms may carry any placeholder level.
        exclude_terms: Labels of terms whose columns are zeroed.
        scale: ``link`` or ``response``.
        level: Credible level of the intervals.
        clamp: Clamp covariates to the training support instead of refusing to extrapolate.

    Examples:
        >>> PredictionRequest(grid).excluding('fs(day,egg)', 'ri(mother)').on_scale('link')  # doctest: +SKIP
    """
    newdata: Dataset
    exclude_terms: Tuple[str, ...] = ()
    scale: str = RESPONSE
    level: float = 0.95
    clamp: bool = False

    def excluding(self: T, *terms: str) -> T:
        return evolve(self, exclude_terms=tuple(terms))

    def on_scale(self: T, scale: str) -> T:
        if scale not in (LINK, RESPONSE):
            raise RequestError(f'Unknown scale {scale!r}, expected {LINK!r} or {RESPONSE!r}')
        return evolve(self, scale=scale)

    def with_level(self: T, level: float) -> T:
        if not 0 < level < 1:
            raise RequestError(f'Credible level must lie in (0, 1), got {level}')
        return evolve(self, level=float(level))

    def with_clamp(self: T, clamp: bool = True) -> T:
        return evolve(self, clamp=clamp)


@attrs(auto_attribs=True, frozen=True, eq=False)
class Prediction(object):
    fit: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    scale: str

    def to_frame(self, grid: Optional[Dataset] = None) -> pd.DataFrame:
        frame = grid.to_frame() if grid is not None else pd.DataFrame(index=range(self.fit.size))
        for name in ('fit', 'se', 'ci_lower', 'ci_upper'):
            frame[name] = getattr(self, name)
        return frame


@attrs(auto_attribs=True, frozen=True, eq=False)
class Slope(object):
    """Response-scale slopes and the gradient of each with respect to β."""
    slope: np.ndarray
    se: np.ndarray
    gradient: np.ndarray
    step: float

    def interval(self, level: float = 0.95) -> Tuple[np.ndarray, np.ndarray]:
        z = _critical(level)
        return self.slope - z * self.se, self.slope + z * self.se


@attrs(auto_attribs=True, frozen=True, order=False)
class ContrastResult(object):
    """One pairwise hypothesis, labelled ``later - earlier`` in factor level order."""
    group: str
    level_a: str
    level_b: str
    hypothesis: str
    estimate: float
    se: float
    z: float
    p_raw: float
    p_adjusted: float
    ci_lower: float
    ci_upper: float

    COLUMNS = ('group', 'hypothesis', 'estimate', 'se', 'z', 'p_raw', 'p_adjusted', 'ci_lower', 'ci_upper')

    def to_dict(self) -> dict:
        return asdict(self)


def _critical(level: float) -> float:
    return float(norm.ppf(0.5 + level / 2.0))


def _check_exclusions(model: FittedModel, exclude: Iterable[str]) -> List[str]:
    return normalize_labels(exclude, model.terms)


def _warn_population(model: FittedModel, exclude: Sequence[str]) -> None:
    if exclude and not isinstance(model.family.link, IdentityLink):
        warn(POPULATION_CAVEAT)


def prediction_matrix(model: FittedModel, newdata: Dataset, exclude: Iterable[str] = (),
                      clamp: bool = False) -> np.ndarray:
    return design_matrix(model.terms, newdata, _check_exclusions(model, exclude), clamp)


def _quadratic_diagonal(rows: np.ndarray, covariance: np.ndarray) -> np.ndarray:
    return np.maximum(np.einsum('ij,jk,ik->i', rows, covariance, rows), 0.0)


def predict(model: FittedModel, request: PredictionRequest) -> Prediction:
    """Fitted values, standard errors and credible intervals on a grid.

    Link-scale intervals are ``fit ± z·se``; on the response scale both the fit and the interval bounds are mapped
    through the inverse link, and the standard error is the delta-method one, ``|dμ/dη|·se``.

    Raises:
        RequestError: An excluded term is not in the model.
    """
    exclude = _check_exclusions(model, request.exclude_terms)
    _warn_population(model, exclude)
    X = design_matrix(model.terms, request.newdata, exclude, request.clamp)
    eta = X @ model.beta
    se = np.sqrt(_quadratic_diagonal(X, model.Vbeta))
    z = _critical(request.level)
    lower, upper = eta - z * se, eta + z * se
    if request.scale == LINK:
        return Prediction(eta, se, lower, upper, LINK)
    family = model.family
    return Prediction(family.link_invert(eta), np.abs(family.link_derivative(eta)) * se, family.link_invert(lower),
                      family.link_invert(upper), RESPONSE)


def _support(model: FittedModel, wrt: str, exclude: Sequence[str]) -> Tuple[float, float]:
    retained = [fitted for fitted in model.terms if fitted.label not in exclude and wrt in fitted.term.columns]
    if not retained or wrt not in model.covariates:
        raise RequestError(f'{wrt!r} is not a numeric covariate of any retained term')
    values = model.covariates[wrt]
    return float(values.min()), float(values.max())


def slope(model: FittedModel, at: Dataset, wrt: str, exclude_terms: Iterable[str] = (),
          step: Optional[float] = None) -> Slope:
    """Response-scale derivative with respect to `wrt` at each row of `at`.

    A central difference with step h = (training range)/1000 is used; within h of a boundary of the training
    support the difference becomes one-sided so that no basis is evaluated outside it. The delta-method gradient
    is ``[dμ/dη(η⁺) X⁺ − dμ/dη(η⁻) X⁻] / (x⁺ − x⁻)``.

    Raises:
        RequestError: `wrt` is not read by any retained term.
        ExtrapolationError: A point lies outside the training support.
    """
    exclude = _check_exclusions(model, exclude_terms)
    _warn_population(model, exclude)
    lo, hi = _support(model, wrt, exclude)
    h = step if step is not None else (hi - lo) / 1000.0
    x = at.numeric(wrt)
    outside = (x < lo) | (x > hi)
    if np.any(outside):
        raise ExtrapolationError(f'{wrt}={x[np.flatnonzero(outside)[0]]!r} lies outside the training support '
                                 f'[{lo!r}, {hi!r}]', column=wrt)
    x_plus = np.minimum(x + h, hi)
    x_minus = np.maximum(x - h, lo)
    family = model.family

    def rows_at(values):
        shifted = at.with_column(wrt, Column.numeric(values))
        X = design_matrix(model.terms, shifted, exclude)
        eta = X @ model.beta
        return X, eta

    X_plus, eta_plus = rows_at(x_plus)
    X_minus, eta_minus = rows_at(x_minus)
    width = (x_plus - x_minus)[:, None]
    gradient = (family.link_derivative(eta_plus)[:, None] * X_plus
                - family.link_derivative(eta_minus)[:, None] * X_minus) / width
    slopes = (family.link_invert(eta_plus) - family.link_invert(eta_minus)) / width[:, 0]
    return Slope(slopes, np.sqrt(_quadratic_diagonal(gradient, model.Vbeta)), gradient, h)


def _mean_gradient(model: FittedModel, rows: Dataset, exclude: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    X = design_matrix(model.terms, rows, exclude)
    eta = X @ model.beta
    return model.family.link_invert(eta), model.family.link_derivative(eta)[:, None] * X


def _contrast_values(estimate: float, gradient: np.ndarray, covariance: np.ndarray,
                     level: float) -> Tuple[float, float, float, float, float]:
    se = float(np.sqrt(max(gradient @ covariance @ gradient, 0.0)))
    if se > 0:
        z = estimate / se
    else:
        z = 0.0 if estimate == 0 else float(np.copysign(np.inf, estimate))
    p = float(2.0 * norm.sf(abs(z)))
    critical = _critical(level)
    return se, z, p, estimate - critical * se, estimate + critical * se


def contrast(model: FittedModel, row_a: Dataset, row_b: Dataset, quantity: str = MEAN, wrt: Optional[str] = None,
             exclude_terms: Iterable[str] = (), level: float = 0.95) -> Tuple[float, float, float, float]:
    """q_a − q_b for single-row grids `row_a` and `row_b`; returns (estimate, se, z, p).

    The mean difference is on the response scale with the delta-method gradient; the slope difference uses the
    slope gradients. Swapping the rows negates the estimate and z exactly.
    """
    exclude = _check_exclusions(model, exclude_terms)
    if quantity == MEAN:
        mean_a, gradient_a = _mean_gradient(model, row_a, exclude)
        mean_b, gradient_b = _mean_gradient(model, row_b, exclude)
        estimate, gradient = float(mean_a[0] - mean_b[0]), gradient_a[0] - gradient_b[0]
    elif quantity == SLOPE:
        if wrt is None:
            raise RequestError('Slope contrasts need the covariate to differentiate with respect to')
        slope_a = slope(model, row_a, wrt, exclude)
        slope_b = slope(model, row_b, wrt, exclude)
        estimate, gradient = float(slope_a.slope[0] - slope_b.slope[0]), slope_a.gradient[0] - slope_b.gradient[0]
    else:
        raise RequestError(f'Unknown quantity {quantity!r}, expected {MEAN!r} or {SLOPE!r}')
    se, z, p, _, _ = _contrast_values(estimate, gradient, model.Vbeta, level)
    return estimate, se, z, p


def grid_dataset(model: FittedModel, rows: Sequence[Mapping[str, Union[str, float]]],
                 exclude: Sequence[str] = ()) -> Dataset:
    """A Dataset of explicit rows; factor columns take the model's training level order.

    Factors read only by excluded terms are filled with their first level when absent.

    Raises:
        RequestError: A column read by a retained term is missing.
    """
    needed: Dict[str, None] = {}
    for fitted in model.terms:
        for name in fitted.term.columns:
            if fitted.label not in exclude:
                needed[name] = None
    columns: Dict[str, list] = {name: [row[name] for row in rows] for name in (rows[0] if rows else {})}
    for name in needed:
        if name not in columns:
            raise RequestError(f'The grid does not supply {name!r}, which a retained term needs', column=name)
    for fitted in model.terms:
        for name in fitted.term.columns:
            if name not in columns and name in model.factor_levels:
                columns[name] = [model.factor_levels[name][0]] * len(rows)
    data = {}
    for name, values in columns.items():
        if name in model.factor_levels:
            data[name] = Column.factor([str(value) for value in values], model.factor_levels[name])
        else:
            data[name] = Column.numeric([float(value) for value in values])
    return Dataset.from_columns(data)


def adjust_by(p_values: Sequence[float]) -> np.ndarray:
    """Benjamini–Yekutieli adjusted p values, in the original order.

    Examples:
        >>> adjust_by([0.01, 0.02, 0.03]).round(4).tolist()
        [0.055, 0.055, 0.055]
    """
    p_values = np.asarray(p_values, dtype=float)
    if p_values.size == 0:
        return p_values
    return np.minimum(multipletests(p_values, method='fdr_by')[1], 1.0)


def adjust_bh(p_values: Sequence[float]) -> np.ndarray:
    """Benjamini–Hochberg adjusted p values, in the original order."""
    p_values = np.asarray(p_values, dtype=float)
    if p_values.size == 0:
        return p_values
    return np.minimum(multipletests(p_values, method='fdr_bh')[1], 1.0)


def pairwise_contrasts(model: FittedModel, at: Mapping[str, Union[str, float]], compare: str,
                       within: Optional[str] = None, quantity: str = MEAN, wrt: Optional[str] = None,
                       exclude_terms: Iterable[str] = (), level: float = 0.95) -> List[ContrastResult]:
    """All pairwise comparisons among the levels of `compare`, within each level of `within`.

    For levels A before B in factor order the hypothesis is ``B - A``. The Benjamini–Yekutieli adjustment runs
    over every comparison returned by one call.

    Args:
        model: The fitted model.
        at: Fixed values of the remaining covariates, e.g. ``{'day': 78}``.
        compare: The factor whose levels are compared.
        within: Optional factor whose levels define separate comparison groups.
        quantity: ``mean`` or ``slope``.
        wrt: Covariate for slopes; defaults to the only numeric entry of `at`.
        exclude_terms: Terms zeroed in every prediction.
        level: Credible level of the intervals.

    Raises:
        NothingToCompareError: `compare` has fewer than two levels.
        RequestError: Unknown factor, term or quantity.
    """
    exclude = _check_exclusions(model, exclude_terms)
    _warn_population(model, exclude)
    for name in (compare, within):
        if name is not None and name not in model.factor_levels:
            raise RequestError(f'{name!r} is not a factor of the model', column=name)
    levels = model.factor_levels[compare]
    if len(levels) < 2:
        raise NothingToCompareError(f'{compare!r} has a single level; there is nothing to compare', column=compare)
    if quantity == SLOPE and wrt is None:
        numeric = [name for name, value in at.items() if not isinstance(value, str)]
        if len(numeric) != 1:
            raise RequestError('Name the covariate for slopes explicitly')
        wrt = numeric[0]
    groups = model.factor_levels[within] if within is not None else (None,)

    pending = []
    for group in groups:
        base = dict(at)
        if group is not None:
            base[within] = group
        rows = {lev: grid_dataset(model, [{**base, compare: lev}], exclude) for lev in levels}
        for earlier, later in combinations(levels, 2):
            estimate, se, z, p = contrast(model, rows[later], rows[earlier], quantity, wrt, exclude, level)
            pending.append((group, earlier, later, estimate, se, z, p))

    adjusted = adjust_by([row[-1] for row in pending])
    critical = _critical(level)
    results = []
    for (group, earlier, later, estimate, se, z, p), p_adjusted in zip(pending, adjusted):
        results.append(ContrastResult(
            group='' if group is None else f'{within}={group}', level_a=earlier, level_b=later,
            hypothesis=f'{later} - {earlier}', estimate=estimate, se=se, z=z, p_raw=p,
            p_adjusted=float(max(p_adjusted, p)), ci_lower=estimate - critical * se, ci_upper=estimate + critical * se,
        ))
    logger.info('%d pairwise %s contrasts of %s', len(results), quantity, compare)
    return results


def contrasts_frame(results: Sequence[ContrastResult]) -> pd.DataFrame:
    return pd.DataFrame([result.to_dict() for result in results], columns=list(ContrastResult.COLUMNS))


__all__ = ['LINK', 'RESPONSE', 'MEAN', 'SLOPE', 'POPULATION_CAVEAT', 'PredictionRequest', 'Prediction', 'Slope',
           'ContrastResult', 'prediction_matrix', 'predict', 'slope', 'contrast', 'grid_dataset', 'adjust_by',
           'adjust_bh', 'pairwise_contrasts', 'contrasts_frame']
