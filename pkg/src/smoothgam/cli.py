"""The ``smoothgam`` command line.

Every command writes its table to stdout (or to ``--out``), diagnostics to stderr, and exits with 0 on success,
2 on bad input, 3 on a request the model cannot answer and 4 on a numerical failure. Errors are reported as one
line starting with ``ERROR:<module>:<kind>:``.
"""
import argparse
import json
import logging
import sys
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from . import __version__
from .archive import load, load_model, save
from .data import Dataset, Schema, load_csv, write_csv
from .design import normalize_labels
from .diagnostics import compare_models, kcheck, summarize
from .errors import GAMError, RequestError, exit_code_for
from .families import IdentityLink, from_descriptor
from .fitter import CRITERIA, REML, FitOptions, FittedModel, fit_model
from .inference import (LINK, MEAN, POPULATION_CAVEAT, RESPONSE, SLOPE, PredictionRequest, contrasts_frame,
                        grid_dataset, pairwise_contrasts, predict, slope)
from .report import write_report
from .simulate import SIMULATORS, simulate
from .wood import WoodFit, fit_wood_lactation

logger = logging.getLogger('smoothgam')

ALL_LEVELS = '*'


def _float(text: str, name: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise RequestError(f'{text!r} is not a number', column=name) from None


def parse_grid_value(model: FittedModel, name: str, text: str) -> List[Union[str, float]]:
    """Values of one grid variable: ``lo:hi:n``, ``a,b,c``, a single value, or ``*`` for every training level.

    Examples:
        >>> parse_grid_value(model, 'day', '0:78:4')  # doctest: +SKIP
        [0.0, 26.0, 52.0, 78.0]
    """
    text = text.strip()
    if name in model.factor_levels:
        if text == ALL_LEVELS:
            return list(model.factor_levels[name])
        return [label.strip() for label in text.split(',')]
    if text.count(':') == 2:
        lo, hi, count = text.split(':')
        try:
            count = int(count)
        except ValueError:
            raise RequestError(f'Grid size {count!r} is not an integer', column=name) from None
        if count < 1:
            raise RequestError(f'Grid size must be positive, got {count}', column=name)
        return np.linspace(_float(lo, name), _float(hi, name), count).tolist()
    return [_float(value, name) for value in text.split(',')]


def _assignments(specs: Sequence[str]) -> Dict[str, str]:
    out = {}
    for spec in specs:
        name, sep, value = spec.partition('=')
        if not sep or not name.strip():
            raise RequestError(f'Grid specification {spec!r} must look like name=values')
        out[name.strip()] = value
    return out


def build_grid(model: FittedModel, specs: Sequence[str], exclude: Sequence[str] = ()) -> Dataset:
    """A prediction grid from ``name=values`` specifications or a single CSV path.

    Factors that retained terms need and the specifications leave out are expanded over all their levels. The
    grid is the Cartesian product in the order the variables were given, automatically expanded factors last.

    Raises:
        RequestError: A numeric covariate a retained term needs is not given, or a value cannot be parsed.
    """
    if len(specs) == 1 and '=' not in specs[0]:
        needed = {name for fitted in model.terms if fitted.label not in exclude for name in fitted.term.columns}
        factors = {name: levels for name, levels in model.factor_levels.items() if name in needed}
        return load_csv(specs[0], Schema(factors=factors))
    values = {name: parse_grid_value(model, name, text) for name, text in _assignments(specs).items()}
    for fitted in model.terms:
        if fitted.label in exclude:
            continue
        for name in fitted.term.columns:
            if name not in values:
                if name not in model.factor_levels:
                    raise RequestError(f'The grid does not give numeric covariate {name!r}', column=name)
                values[name] = list(model.factor_levels[name])
    names = list(values)
    rows = [dict(zip(names, combination)) for combination in product(*(values[name] for name in names))]
    if not rows:
        raise RequestError('The grid is empty')
    return grid_dataset(model, rows, exclude)


def _write_frame(frame: pd.DataFrame, out: Optional[str], stdout: TextIO) -> None:
    options = dict(index=False, float_format='%.17g', lineterminator='\n')
    if out:
        frame.to_csv(out, encoding='utf-8', **options)
    else:
        stdout.write(frame.to_csv(**options))


def _schema(args) -> Schema:
    schema = Schema.from_json(args.schema) if args.schema else Schema()
    if args.response:
        schema = schema.with_response(args.response)
    if args.weights:
        schema = schema.with_weights(args.weights)
    for spec in args.factor or ():
        name, sep, levels = spec.partition('=')
        schema = schema.with_factor(name.strip(), [level.strip() for level in levels.split(',')] if sep else None)
    return schema


def _exclusions(model: FittedModel, args) -> List[str]:
    return normalize_labels(args.exclude or (), model.terms)


def cmd_fit(args, stdout: TextIO) -> None:
    data = load_csv(args.data, _schema(args))
    options = FitOptions(criterion=args.criterion).with_seed(args.seed)
    model = fit_model(args.formula, data, from_descriptor(args.family), options)
    if args.out:
        save(model, args.out, data.fingerprint())
    stdout.write(summarize(model).to_text() + '\n')


def cmd_predict(args, stdout: TextIO) -> None:
    model = load_model(args.model)
    exclude = _exclusions(model, args)
    grid = build_grid(model, args.grid, exclude)
    request = PredictionRequest(grid).excluding(*exclude).on_scale(args.scale).with_level(args.level)
    prediction = predict(model, request.with_clamp(args.clamp))
    _write_frame(prediction.to_frame(grid), args.out, stdout)


def cmd_slopes(args, stdout: TextIO) -> None:
    model = load_model(args.model)
    exclude = _exclusions(model, args)
    grid = build_grid(model, args.at, exclude)
    result = slope(model, grid, args.wrt, exclude)
    frame = grid.to_frame()
    frame['slope'], frame['se'] = result.slope, result.se
    frame['ci_lower'], frame['ci_upper'] = result.interval(args.level)
    _write_frame(frame, args.out, stdout)


def _contrast_arguments(model: FittedModel, args) -> dict:
    at = {}
    for name, text in _assignments(args.at or ()).items():
        at[name] = text.strip() if name in model.factor_levels else _float(text, name)
    if args.day is not None:
        at[args.day_name] = args.day
    return dict(at=at, compare=args.compare, within=args.within, quantity=args.quantity, wrt=args.wrt,
                exclude_terms=_exclusions(model, args), level=args.level)


def cmd_contrasts(args, stdout: TextIO) -> None:
    model = load_model(args.model)
    results = pairwise_contrasts(model, **_contrast_arguments(model, args))
    _write_frame(contrasts_frame(results), args.out, stdout)


def _labelled(specs: Sequence[str]) -> List[Tuple[str, Union[FittedModel, WoodFit]]]:
    fits = []
    for spec in specs:
        label, sep, path = spec.partition('=')
        if not sep or not Path(path).exists():
            label, path = Path(spec).stem, spec
        fits.append((label, load(path)))
    return fits


def cmd_compare(args, stdout: TextIO) -> None:
    frame = compare_models(_labelled(args.models))
    if args.out:
        _write_frame(frame, args.out, stdout)
    else:
        stdout.write(frame.to_string(index=False) + '\n')


def cmd_check(args, stdout: TextIO) -> None:
    checks = kcheck(load_model(args.model), args.seed, args.permutations)
    frame = pd.DataFrame([{'label': check.label, 'k': check.k, 'edf': check.edf, 'index': check.index,
                           'p_value': check.p_value, 'flagged': check.flagged} for check in checks],
                         columns=['label', 'k', 'edf', 'index', 'p_value', 'flagged'])
    stdout.write(frame.to_string(index=False) + '\n')


def cmd_simulate(args, stdout: TextIO) -> None:
    data = simulate(args.kind, args.n, args.seed)
    if args.out:
        write_csv(data, args.out)
    else:
        _write_frame(data.to_frame(), None, stdout)


def cmd_wood(args, stdout: TextIO) -> None:
    data = load_csv(args.data, _schema(args))
    fit = fit_wood_lactation(data, args.week, args.fat)
    if args.out:
        save(fit, args.out)
    stdout.write(pd.DataFrame([fit.summary_row('Wood')]).to_string(index=False) + '\n')


def cmd_summary(args, stdout: TextIO) -> None:
    summary = summarize(load_model(args.model), args.seed)
    if args.format == 'json':
        stdout.write(json.dumps(summary.to_dict(), sort_keys=True, indent=2) + '\n')
    else:
        stdout.write(summary.to_text() + '\n')


def cmd_report(args, stdout: TextIO) -> None:
    fits = _labelled(args.models)
    contrasts, note = None, None
    if args.compare:
        labels = [label for label, _ in fits]
        chosen = args.contrast_model or labels[0]
        if chosen not in labels:
            raise RequestError(f'No model labelled {chosen!r}; models are {labels}')
        model = dict(fits)[chosen]
        if not isinstance(model, FittedModel):
            raise RequestError(f'Contrasts need a GAM, {chosen!r} is not one')
        arguments = _contrast_arguments(model, args)
        contrasts = pairwise_contrasts(model, **arguments)
        if arguments['exclude_terms'] and not isinstance(model.family.link, IdentityLink):
            note = POPULATION_CAVEAT
    write_report(args.out, fits, contrasts, note, args.seed)


def _add_data_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--data', required=True, help='CSV file with a header row')
    parser.add_argument('--schema', help='JSON schema sidecar declaring the response, weights and factors')
    parser.add_argument('--response', help='response column')
    parser.add_argument('--weights', help='prior weight column')
    parser.add_argument('--factor', action='append', metavar='NAME[=L1,L2,...]',
                        help='declare a factor, optionally with its level order; repeatable')


def _add_contrast_options(parser: argparse.ArgumentParser, required: bool) -> None:
    parser.add_argument('--compare', required=required, help='factor whose levels are compared pairwise')
    parser.add_argument('--within', help='factor whose levels form separate comparison groups')
    parser.add_argument('--at', action='append', metavar='NAME=VALUE', help='fixed covariate value; repeatable')
    parser.add_argument('--day', type=float, help='shorthand for --at DAY_NAME=DAY')
    parser.add_argument('--day-name', default='day', help='covariate --day refers to (default: day)')
    parser.add_argument('--quantity', choices=(MEAN, SLOPE), default=MEAN)
    parser.add_argument('--wrt', help='covariate slopes are taken with respect to')


def _add_inference_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--exclude', action='append', metavar='TERM',
                        help="term whose columns are zeroed, e.g. 'ri(mother)'; repeatable")
    parser.add_argument('--level', type=float, default=0.95, help='credible level (default: 0.95)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='smoothgam', description='Penalized regression spline GAMs.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='more diagnostics on stderr')
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    fit = commands.add_parser('fit', help='fit a GAM and write a model archive')
    _add_data_options(fit)
    fit.add_argument('--formula', required=True, help="e.g. 'fat ~ 1 + s(week, k=9)'")
    fit.add_argument('--family', default='gaussian', help="e.g. 'tweedie(link=log)' (default: gaussian)")
    fit.add_argument('--criterion', choices=CRITERIA, default=REML)
    fit.add_argument('--seed', type=int, default=0, help='seed of the optimizer restarts')
    fit.add_argument('--out', help='model archive to write')
    fit.set_defaults(handler=cmd_fit)

    pred = commands.add_parser('predict', help='predictions with credible intervals on a grid')
    pred.add_argument('--model', required=True)
    pred.add_argument('--grid', action='append', required=True, metavar='NAME=SPEC|CSV',
                      help="'day=0:78:100', 'sex=F,M', 'treat=*' or a CSV file; repeatable")
    pred.add_argument('--scale', choices=(LINK, RESPONSE), default=RESPONSE)
    pred.add_argument('--clamp', action='store_true', help='clamp covariates to the training range')
    pred.add_argument('--out', help='CSV file (default: stdout)')
    _add_inference_options(pred)
    pred.set_defaults(handler=cmd_predict)

    slopes = commands.add_parser('slopes', help='response-scale slopes with credible intervals')
    slopes.add_argument('--model', required=True)
    slopes.add_argument('--at', action='append', required=True, metavar='NAME=SPEC|CSV')
    slopes.add_argument('--wrt', required=True, help='covariate to differentiate with respect to')
    slopes.add_argument('--out', help='CSV file (default: stdout)')
    _add_inference_options(slopes)
    slopes.set_defaults(handler=cmd_slopes)

    contrasts = commands.add_parser('contrasts', help='pairwise comparisons with Benjamini-Yekutieli p values')
    contrasts.add_argument('--model', required=True)
    _add_contrast_options(contrasts, required=True)
    contrasts.add_argument('--out', help='CSV file (default: stdout)')
    _add_inference_options(contrasts)
    contrasts.set_defaults(handler=cmd_contrasts)

    compare = commands.add_parser('compare', help='AIC table of several archives')
    compare.add_argument('--models', nargs='+', required=True, metavar='[LABEL=]ARCHIVE')
    compare.add_argument('--out', help='CSV file (default: aligned table on stdout)')
    compare.set_defaults(handler=cmd_compare)

    check = commands.add_parser('check', help='basis dimension check of every univariate smooth')
    check.add_argument('--model', required=True)
    check.add_argument('--seed', type=int, default=0)
    check.add_argument('--permutations', type=int, default=1000)
    check.set_defaults(handler=cmd_check)

    sim = commands.add_parser('simulate', help='write a seeded synthetic dataset')
    sim.add_argument('--kind', choices=sorted(SIMULATORS), required=True)
    sim.add_argument('--n', type=int, required=True)
    sim.add_argument('--seed', type=int, default=0)
    sim.add_argument('--out', help='CSV file (default: stdout)')
    sim.set_defaults(handler=cmd_simulate)

    wood = commands.add_parser('wood', help="fit Wood's lactation curve")
    _add_data_options(wood)
    wood.add_argument('--week', default='week')
    wood.add_argument('--fat', help='yield column (default: the response)')
    wood.add_argument('--out', help='archive to write')
    wood.set_defaults(handler=cmd_wood)

    summary = commands.add_parser('summary', help='summary of a model archive')
    summary.add_argument('--model', required=True)
    summary.add_argument('--format', choices=('text', 'json'), default='text')
    summary.add_argument('--seed', type=int, help='also run the basis dimension check with this seed')
    summary.set_defaults(handler=cmd_summary)

    report = commands.add_parser('report', help='write an .xlsx report')
    report.add_argument('--models', nargs='+', required=True, metavar='[LABEL=]ARCHIVE')
    report.add_argument('--out', required=True, help='.xlsx file')
    report.add_argument('--contrast-model', help='label of the model contrasts are computed on')
    report.add_argument('--seed', type=int, help='also run the basis dimension check with this seed')
    _add_contrast_options(report, required=False)
    _add_inference_options(report)
    report.set_defaults(handler=cmd_report)
    return parser


def configure_logging(verbosity: int) -> None:
    level = max(logging.WARNING - 10 * verbosity, logging.DEBUG)
    logging.basicConfig(stream=sys.stderr, level=level, format='%(levelname)s:%(name)s:%(message)s')
    logging.captureWarnings(True)


def main(argv: Optional[Sequence[str]] = None, stdout: Optional[TextIO] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    stdout = stdout or sys.stdout
    try:
        args.handler(args, stdout)
    except GAMError as e:
        print(e.one_line(), file=sys.stderr)
        logger.debug('Failure details', exc_info=True)
        return exit_code_for(e)
    return 0


__all__ = ['main', 'build_parser', 'build_grid', 'parse_grid_value']
