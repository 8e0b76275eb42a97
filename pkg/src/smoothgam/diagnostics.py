"""Term significance tests, the basis-dimension check, model summaries and AIC comparison tables."""
import logging
from math import ceil
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from attr import asdict, attrib, attrs
from scipy.stats import f as f_distribution

from .errors import ComparisonError, RequestError
from .fitter import FittedModel
from .wood import WoodFit

logger = logging.getLogger(__name__)

N_PERMUTATIONS = 1000


@attrs(auto_attribs=True, frozen=True)
class TermTest(object):
    """Wald-type test that a term's coefficients are all zero.

    Smooth terms use a rank-r pseudo-inverse of the frequentist covariance block, with
    r = min(ceil(edf) + 1, block width), and are referred to F(r, n − τ). Parametric terms use the full Wald
    statistic on the posterior covariance block.
    """
    label: str
    kind: str
    edf: float
    columns: int
    statistic: float
    df1: float
    df2: float
    p_value: float


def _pseudo_inverse(block: np.ndarray, rank: int) -> Tuple[np.ndarray, int]:
    eigenvalues, eigenvectors = np.linalg.eigh((block + block.T) / 2.0)
    order = np.argsort(eigenvalues)[::-1][:rank]
    eigenvalues, eigenvectors = eigenvalues[order], eigenvectors[:, order]
    keep = eigenvalues > 1e-12 * max(eigenvalues.max(initial=0.0), 1e-300)
    eigenvalues, eigenvectors = eigenvalues[keep], eigenvectors[:, keep]
    return (eigenvectors / eigenvalues) @ eigenvectors.T, int(keep.sum())


def term_test(model: FittedModel, label: str) -> TermTest:
    """Test H0: the term contributes nothing.

    Raises:
        RequestError: `label` is not a model term.
    """
    fitted = model.term(label)
    start, stop = model.term_index[fitted.label]
    beta = model.beta[start:stop]
    edf = model.edf_by_term[fitted.label]
    df2 = max(model.residual_df, 1e-300)
    if fitted.term.PENALIZED:
        rank = min(int(ceil(edf - 1e-9)) + 1, stop - start)
        inverse, rank = _pseudo_inverse(model.Ve[start:stop, start:stop], rank)
    else:
        inverse, rank = _pseudo_inverse(model.Vbeta[start:stop, start:stop], stop - start)
    if rank == 0:
        return TermTest(fitted.label, fitted.term.KIND, edf, stop - start, 0.0, 0.0, df2, 1.0)
    statistic = float(beta @ inverse @ beta) / rank
    p_value = float(f_distribution.sf(statistic, rank, df2))
    return TermTest(fitted.label, fitted.term.KIND, edf, stop - start, statistic, float(rank), df2, p_value)


@attrs(auto_attribs=True, frozen=True)
class KCheck(object):
    """Residual randomization check of a smooth's basis dimension.

    `index` is the ratio of the mean squared difference of neighbouring residuals, ordered by the covariate, to
    twice their mean square; values well below 1 mean structure is left in the residuals. `p_value` is the share of
    residual permutations with an index at least as low. `flagged` marks terms whose EDF is close to the basis
    dimension while the residual pattern is significant, suggesting a larger k.
    """
    label: str
    k: int
    edf: float
    index: float
    p_value: float
    flagged: bool


def _neighbour_index(residuals: np.ndarray) -> float:
    denominator = 2.0 * np.sum(residuals ** 2)
    if denominator <= 0:
        return 1.0
    return float(np.sum(np.diff(residuals) ** 2) / denominator)


def kcheck(model: FittedModel, seed: int = 0, n_permutations: int = N_PERMUTATIONS) -> List[KCheck]:
    """Basis-dimension check of every univariate smooth; the permutations are seeded so reruns agree."""
    rng = np.random.default_rng(seed)
    residuals = model.family.deviance_residuals(model.y, model.fitted_values, model.weights)
    out = []
    for fitted in model.terms:
        if not fitted.term.UNIVARIATE_SMOOTH:
            continue
        x = model.covariates[fitted.term.covariate]
        ordered = residuals[np.argsort(x, kind='stable')]
        index = _neighbour_index(ordered)
        permuted = np.array([_neighbour_index(rng.permutation(ordered)) for _ in range(n_permutations)])
        p_value = (1.0 + np.sum(permuted <= index)) / (1.0 + n_permutations)
        edf = model.edf_by_term[fitted.label]
        flagged = bool(edf > 0.9 * fitted.n_columns and p_value < 0.05)
        if flagged:
            logger.warning('Basis dimension of %s may be too low (EDF %.2f of %d, p %.3g)', fitted.label, edf,
                           fitted.n_columns, p_value)
        out.append(KCheck(fitted.label, fitted.k_used, edf, index, float(p_value), flagged))
    return out


@attrs(auto_attribs=True, frozen=True, eq=False)
class ModelSummary(object):
    """Everything a report of one fit shows."""
    formula: str
    family: str
    n: int
    criterion: str
    criterion_value: Optional[float]
    edf: float
    residual_df: float
    phi: float
    power: Optional[float]
    deviance: float
    null_deviance: float
    deviance_explained: float
    rmse: float
    log_likelihood: float
    aic: float
    lambdas: Dict[str, float]
    terms: Tuple[TermTest, ...]
    kcheck: Tuple[KCheck, ...] = attrib(default=())

    def terms_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(test) for test in self.terms],
                            columns=['label', 'kind', 'edf', 'columns', 'statistic', 'df1', 'df2', 'p_value'])

    def to_dict(self) -> dict:
        payload = asdict(self, recurse=False)
        payload['terms'] = [asdict(test) for test in self.terms]
        payload['kcheck'] = [asdict(check) for check in self.kcheck]
        return payload

    def to_text(self) -> str:
        lines = [
            f'Formula: {self.formula}',
            f'Family: {self.family}',
            f'n = {self.n}, EDF = {self.edf:.4f}, residual df = {self.residual_df:.4f}',
            f'{self.criterion.upper()} = {self.criterion_value!r}' if self.criterion_value is not None
            else 'No smoothing parameters',
            f'Scale = {self.phi:.6g}' + (f', power = {self.power:.4f}' if self.power is not None else ''),
            f'Deviance = {self.deviance:.6g}, explained = {100 * self.deviance_explained:.2f}%',
            f'RMSE = {self.rmse:.6g}, log-likelihood = {self.log_likelihood:.6g}, AIC = {self.aic:.6g}',
            '',
            self.terms_frame().to_string(index=False, float_format=lambda value: f'{value:.6g}'),
        ]
        if self.lambdas:
            lines += ['', 'Smoothing parameters:']
            lines += [f'  {group}: {value:.6g}' for group, value in self.lambdas.items()]
        if self.kcheck:
            frame = pd.DataFrame([asdict(check) for check in self.kcheck])
            lines += ['', 'Basis dimension check:', frame.to_string(index=False,
                                                                   float_format=lambda value: f'{value:.4g}')]
        return '\n'.join(lines)


def summarize(model: FittedModel, check_seed: Optional[int] = None) -> ModelSummary:
    """Summary of a fit; the basis-dimension check runs only when a seed is given."""
    return ModelSummary(
        formula=model.formula, family=model.family.descriptor, n=model.n, criterion=model.criterion,
        criterion_value=model.criterion_value, edf=model.edf_total, residual_df=model.residual_df, phi=model.phi,
        power=model.power, deviance=model.deviance, null_deviance=model.null_deviance,
        deviance_explained=model.deviance_explained, rmse=model.rmse, log_likelihood=model.log_likelihood,
        aic=model.aic, lambdas=dict(zip(model.groups, map(float, model.lambdas))),
        terms=tuple(term_test(model, fitted.label) for fitted in model.terms),
        kcheck=tuple(kcheck(model, check_seed)) if check_seed is not None else (),
    )


def _comparison_row(label: str, fit: Union[FittedModel, WoodFit]) -> dict:
    if isinstance(fit, WoodFit):
        row = fit.summary_row(label)
        row.update(family='gaussian', df=float(fit.df), n=fit.n)
        return row
    if not isinstance(fit, FittedModel):
        raise RequestError(f'Cannot compare an object of type {type(fit).__name__}')
    return {'model': label, 'response': fit.response_name, 'family': fit.family.descriptor, 'edf': fit.edf_total,
            'df': fit.edf_total + fit.family.n_scale_parameters, 'aic': fit.aic, 'deviance': fit.deviance,
            'deviance_explained': fit.deviance_explained, 'rmse': fit.rmse, 'n': fit.n}


def compare_models(fits: Sequence[Tuple[str, Union[FittedModel, WoodFit]]]) -> pd.DataFrame:
    """AIC table of models fitted to the same response and rows, best first, with ΔAIC.

    Raises:
        ComparisonError: The models describe different responses or different numbers of observations.
    """
    if not fits:
        raise ComparisonError('Nothing to compare')
    rows = [_comparison_row(label, fit) for label, fit in fits]
    responses = {row['response'] for row in rows}
    if len(responses) > 1:
        raise ComparisonError(f'Models describe different responses {sorted(responses)}; their AICs are not '
                              'comparable')
    sizes = {row['n'] for row in rows}
    if len(sizes) > 1:
        raise ComparisonError(f'Models were fitted to different numbers of rows {sorted(sizes)}')
    frame = pd.DataFrame(rows, columns=['model', 'response', 'family', 'edf', 'df', 'aic', 'deviance',
                                        'deviance_explained', 'rmse', 'n'])
    frame = frame.sort_values('aic', kind='stable').reset_index(drop=True)
    frame['delta_aic'] = frame['aic'] - frame['aic'].iloc[0]
    return frame


__all__ = ['TermTest', 'KCheck', 'ModelSummary', 'term_test', 'kcheck', 'summarize', 'compare_models']
