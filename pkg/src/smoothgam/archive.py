"""Versioned JSON archives of fitted models.

An archive holds everything predictions, slopes, contrasts and summaries need, so a loaded model answers them
exactly as the model that was saved. Floats are written in their shortest round-trip form.
"""
import json
import logging
from os import PathLike
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import ArchiveError, GAMError
from .families import from_descriptor
from .fitter import FittedModel
from .terms.classes import FittedTerm
from .wood import WoodFit

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
GAM = 'gam'
WOOD = 'wood'


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f'{type(value).__name__} is not JSON serializable')


def _array(payload: dict, key: str) -> np.ndarray:
    return np.asarray(payload[key], dtype=float)


def model_to_dict(model: FittedModel, fingerprint: Optional[dict] = None) -> dict:
    return {
        'format_version': FORMAT_VERSION,
        'kind': GAM,
        'formula': model.formula,
        'family': model.family.descriptor,
        'phi': model.phi,
        'criterion': model.criterion,
        'criterion_value': model.criterion_value,
        'groups': list(model.groups),
        'lambdas': model.lambdas.tolist(),
        'terms': [fitted.to_dict() for fitted in model.terms],
        'term_index': {label: list(span) for label, span in model.term_index.items()},
        'beta': model.beta.tolist(),
        'Vbeta': model.Vbeta.tolist(),
        'Ve': model.Ve.tolist(),
        'edf': model.edf.tolist(),
        'edf_by_term': model.edf_by_term,
        'statistics': {
            'deviance': model.deviance,
            'null_deviance': model.null_deviance,
            'log_likelihood': model.log_likelihood,
            'aic': model.aic,
            'null_space_dim': model.null_space_dim,
            'iterations': model.iterations,
        },
        'response_name': model.response_name,
        'weight_name': model.weight_name,
        'y': model.y.tolist(),
        'weights': model.weights.tolist(),
        'fitted_values': model.fitted_values.tolist(),
        'covariates': {name: values.tolist() for name, values in model.covariates.items()},
        'factor_levels': {name: list(levels) for name, levels in model.factor_levels.items()},
        'penalty_scales': model.penalty_scales,
        'trace': list(model.trace),
        'data_fingerprint': fingerprint,
    }


def model_from_dict(payload: dict) -> FittedModel:
    statistics = payload['statistics']
    family = from_descriptor(payload['family']).with_phi(payload['phi'])
    return FittedModel(
        formula=payload['formula'], family=family,
        terms=tuple(FittedTerm.from_dict(term) for term in payload['terms']),
        term_index={label: (int(span[0]), int(span[1])) for label, span in payload['term_index'].items()},
        groups=tuple(payload['groups']), lambdas=_array(payload, 'lambdas'), beta=_array(payload, 'beta'),
        Vbeta=_array(payload, 'Vbeta').reshape(len(payload['beta']), -1),
        Ve=_array(payload, 'Ve').reshape(len(payload['beta']), -1), edf=_array(payload, 'edf'),
        edf_by_term={label: float(value) for label, value in payload['edf_by_term'].items()},
        phi=float(payload['phi']), deviance=statistics['deviance'], null_deviance=statistics['null_deviance'],
        log_likelihood=statistics['log_likelihood'], aic=statistics['aic'], criterion=payload['criterion'],
        criterion_value=payload['criterion_value'], response_name=payload['response_name'],
        weight_name=payload['weight_name'], y=_array(payload, 'y'), weights=_array(payload, 'weights'),
        fitted_values=_array(payload, 'fitted_values'),
        covariates={name: np.asarray(values, dtype=float) for name, values in payload['covariates'].items()},
        factor_levels={name: tuple(levels) for name, levels in payload['factor_levels'].items()},
        null_space_dim=int(statistics['null_space_dim']), iterations=int(statistics['iterations']),
        trace=tuple(payload.get('trace', ())), penalty_scales=dict(payload.get('penalty_scales', {})),
    )


def wood_to_dict(fit: WoodFit) -> dict:
    return {
        'format_version': FORMAT_VERSION,
        'kind': WOOD,
        'alpha': fit.alpha, 'delta': fit.delta, 'kappa': fit.kappa,
        'residual_variance': fit.residual_variance, 'covariance': fit.covariance.tolist(),
        'rss': fit.rss, 'tss': fit.tss, 'n': fit.n, 'log_likelihood': fit.log_likelihood, 'aic': fit.aic,
        'evaluations': fit.evaluations, 'gradient_norm': fit.gradient_norm,
        'response_name': fit.response_name, 'covariate_name': fit.covariate_name,
    }


def wood_from_dict(payload: dict) -> WoodFit:
    fields = {key: value for key, value in payload.items() if key not in ('format_version', 'kind')}
    fields['covariance'] = np.asarray(fields['covariance'], dtype=float)
    return WoodFit(**fields)


def save(fit: Union[FittedModel, WoodFit], path: PathLike, fingerprint: Optional[dict] = None) -> None:
    """Write `fit` to `path`.

    Raises:
        ArchiveError: The file cannot be written.
    """
    payload = wood_to_dict(fit) if isinstance(fit, WoodFit) else model_to_dict(fit, fingerprint)
    try:
        Path(path).write_text(json.dumps(payload, sort_keys=True, default=_json_default, allow_nan=True) + '\n',
                              encoding='utf-8')
    except OSError as e:
        raise ArchiveError(f'Cannot write model archive {path}: {e}') from e
    logger.info('Saved %s archive to %s', payload['kind'], path)


def load(path: PathLike) -> Union[FittedModel, WoodFit]:
    """Read an archive written by :func:`save`.

    The format version is checked before anything else is interpreted.

    Raises:
        ArchiveError: The file is unreadable, not an archive, of another format version or incomplete.
    """
    try:
        payload = json.loads(Path(path).read_text(encoding='utf-8'))
    except FileNotFoundError as e:
        raise ArchiveError(f'Model archive {path} does not exist') from e
    except (OSError, UnicodeDecodeError) as e:
        raise ArchiveError(f'Cannot read model archive {path}: {e}') from e
    except json.JSONDecodeError as e:
        raise ArchiveError(f'Model archive {path} is not valid JSON: {e.msg}', row=e.lineno) from e
    if not isinstance(payload, dict) or 'format_version' not in payload:
        raise ArchiveError(f'{path} is not a model archive')
    if payload['format_version'] != FORMAT_VERSION:
        raise ArchiveError(f'Unsupported archive format version {payload["format_version"]!r}, '
                           f'expected {FORMAT_VERSION}')
    kind = payload.get('kind', GAM)
    try:
        return wood_from_dict(payload) if kind == WOOD else model_from_dict(payload)
    except (KeyError, TypeError, ValueError) as e:
        raise ArchiveError(f'Model archive {path} is incomplete or malformed: {e!r}') from e
    except GAMError as e:
        raise ArchiveError(f'Model archive {path} holds an invalid model: {e.message}') from e


def load_model(path: PathLike) -> FittedModel:
    fit = load(path)
    if not isinstance(fit, FittedModel):
        raise ArchiveError(f'{path} holds a {WOOD} fit, not a GAM')
    return fit


def fingerprint_of(path: PathLike) -> Optional[dict]:
    """The training-data fingerprint stored in a GAM archive, if any."""
    payload = json.loads(Path(path).read_text(encoding='utf-8'))
    return payload.get('data_fingerprint')


__all__ = ['FORMAT_VERSION', 'save', 'load', 'load_model', 'model_to_dict', 'model_from_dict', 'wood_to_dict',
           'wood_from_dict', 'fingerprint_of']
