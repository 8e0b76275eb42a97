"""Penalized regression spline generalized additive models: B-spline and thin plate regression spline bases, by-factor,
constrained-interaction and random smooths, random intercepts, gaussian, gamma and Tweedie families, REML or GCV
smoothness selection, and delta-method predictions, slopes and pairwise contrasts with Benjamini-Yekutieli adjusted
p values. Models are described by formulas such as ``y ~ 1 + s(day, k=9) + fs(day, animal)`` or built from the term
prototypes in :mod:`.terms`, fitted with :func:`fit_model` and persisted with :mod:`.archive`."""

__version__ = '1.0.0'

from . import archive, basis, data, design, diagnostics, errors, families, fitter, formula, inference, terms, wood
from .data import Dataset, Schema, load_csv, write_csv
from .diagnostics import compare_models, kcheck, summarize, term_test
from .families import Gamma, Gaussian, Tweedie, from_descriptor
from .fitter import FitOptions, FittedModel, fit_model
from .formula import parse_formula
from .inference import PredictionRequest, pairwise_contrasts, predict, slope
from .wood import fit_wood_lactation

__all__ = ['archive', 'basis', 'data', 'design', 'diagnostics', 'errors', 'families', 'fitter', 'formula',
           'inference', 'terms', 'wood', 'Dataset', 'Schema', 'load_csv', 'write_csv', 'compare_models', 'kcheck',
           'summarize', 'term_test', 'Gamma', 'Gaussian', 'Tweedie', 'from_descriptor', 'FitOptions', 'FittedModel',
           'fit_model', 'parse_formula', 'PredictionRequest', 'pairwise_contrasts', 'predict', 'slope',
           'fit_wood_lactation']
