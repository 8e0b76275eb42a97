"""Spreadsheet reports: an AIC comparison sheet, a term table per GAM and an optional contrasts sheet."""
import logging
import re
from math import isfinite
from numbers import Integral, Real
from os import PathLike
from typing import BinaryIO, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from attr import attrs
from xlsxwriter import Workbook
from xlsxwriter.exceptions import XlsxWriterException
from xlsxwriter.worksheet import Worksheet

from .diagnostics import compare_models, summarize
from .errors import ReportError
from .fitter import FittedModel
from .formats import FormatDict, FormatHandler, ReportFormats as F
from .inference import ContrastResult, contrasts_frame
from .wood import WoodFit

logger = logging.getLogger(__name__)

SIGNIFICANCE = 0.05
P_COLUMNS = ('p_value', 'p_raw', 'p_adjusted')
SIGNED_COLUMNS = ('estimate', 'delta_aic', 'z', 'ci_lower', 'ci_upper')
PERCENT_COLUMNS = ('deviance_explained',)
INTEGER_COLUMNS = ('n', 'columns')
MAX_SHEET_NAME = 31


@attrs(auto_attribs=True)
class WorkbookPair(object):
    """A :class:`Workbook` bundled with the :class:`FormatHandler` that owns its formats."""
    wb: Workbook
    fmt: FormatHandler

    def add_worksheet(self, name: str) -> 'WorksheetTriplet':
        return WorksheetTriplet(self.wb, self.wb.add_worksheet(name), self.fmt)

    @classmethod
    def from_wb(cls, wb: Workbook) -> 'WorkbookPair':
        return cls(wb, FormatHandler(wb))


@attrs(auto_attribs=True)
class WorksheetTriplet(object):
    wb: Workbook
    ws: Worksheet
    fmt: FormatHandler


def cell_format(column: str, value) -> FormatDict:
    """The format a value of `column` is written with."""
    if isinstance(value, str) or value is None:
        return F.default_font
    if column in P_COLUMNS:
        return F.table_significant_p_value if value < SIGNIFICANCE else F.table_p_value
    if column in PERCENT_COLUMNS:
        return F.table_percent
    if column in INTEGER_COLUMNS or isinstance(value, Integral):
        return F.table_integer
    if column in SIGNED_COLUMNS:
        return F.table_difference
    return F.table_estimate


def write_table(target: WorksheetTriplet, frame: pd.DataFrame, first_row: int = 0) -> int:
    """Write `frame` with a header row starting at `first_row`; returns the row after the table."""
    ws, fmt = target.ws, target.fmt
    for col, name in enumerate(frame.columns):
        ws.write(first_row, col, name, fmt.verify_format(F.table_column_header))
        ws.set_column(col, col, max(12, len(str(name)) + 2))
    for offset, record in enumerate(frame.itertuples(index=False), start=1):
        for col, (name, value) in enumerate(zip(frame.columns, record)):
            if hasattr(value, 'item'):
                value = value.item()
            if isinstance(value, Real) and not isinstance(value, Integral) and not isfinite(value):
                ws.write_string(first_row + offset, col, str(value), fmt.verify_format(F.default_font))
            else:
                ws.write(first_row + offset, col, value, fmt.verify_format(cell_format(name, value)))
    return first_row + len(frame) + 1


def write_note(target: WorksheetTriplet, row: int, text: str, width: int = 8) -> int:
    target.ws.merge_range(row, 0, row, width - 1, text, target.fmt.verify_format(F.default_note))
    return row + 1


def _sheet_name(label: str, taken: Dict[str, None]) -> str:
    name = re.sub(r'[\[\]:*?/\\]', '_', label)[:MAX_SHEET_NAME] or 'model'
    base, suffix = name, 2
    while name.lower() in taken:
        tail = f'~{suffix}'
        name = base[:MAX_SHEET_NAME - len(tail)] + tail
        suffix += 1
    taken[name.lower()] = None
    return name


def write_model_sheet(target: WorksheetTriplet, label: str, model: FittedModel,
                      check_seed: Optional[int] = None) -> None:
    summary = summarize(model, check_seed)
    ws, fmt = target.ws, target.fmt
    ws.write(0, 0, label, fmt.verify_format(F.default_header))
    facts: List[Tuple[str, object]] = [
        ('formula', summary.formula), ('family', summary.family), ('n', summary.n), ('edf', summary.edf),
        ('aic', summary.aic), ('deviance', summary.deviance), ('deviance_explained', summary.deviance_explained),
        ('rmse', summary.rmse), ('phi', summary.phi),
    ]
    if summary.power is not None:
        facts.append(('power', summary.power))
    row = 2
    for name, value in facts:
        ws.write(row, 0, name, fmt.verify_format(F.default_font_bold))
        ws.write(row, 1, value, fmt.verify_format(cell_format(name, value)))
        row += 1
    row = write_table(target, summary.terms_frame(), row + 1)
    if summary.kcheck:
        write_table(target, pd.DataFrame([_kcheck_row(check) for check in summary.kcheck]), row + 1)


def _kcheck_row(check) -> dict:
    return {'label': check.label, 'k': check.k, 'edf': check.edf, 'index': check.index, 'p_value': check.p_value,
            'flagged': 'yes' if check.flagged else ''}


def write_report(target: Union[str, PathLike, BinaryIO], fits: Sequence[Tuple[str, Union[FittedModel, WoodFit]]],
                 contrasts: Optional[Sequence[ContrastResult]] = None, contrast_note: Optional[str] = None,
                 check_seed: Optional[int] = None) -> None:
    """Write the report workbook to a path or a binary stream.

    Raises:
        ComparisonError: The fits are not comparable.
        ReportError: The workbook cannot be written.
    """
    comparison = compare_models(fits)
    wb = Workbook(target)
    pair = WorkbookPair.from_wb(wb)
    taken: Dict[str, None] = {}
    try:
        sheet = pair.add_worksheet(_sheet_name('Comparison', taken))
        write_table(sheet, comparison)
        for label, fit in fits:
            if isinstance(fit, FittedModel):
                write_model_sheet(pair.add_worksheet(_sheet_name(label, taken)), label, fit, check_seed)
        if contrasts:
            sheet = pair.add_worksheet(_sheet_name('Contrasts', taken))
            row = write_table(sheet, contrasts_frame(contrasts))
            if contrast_note:
                write_note(sheet, row + 1, contrast_note)
    finally:
        try:
            wb.close()
        except (XlsxWriterException, OSError) as e:
            raise ReportError(f'Cannot write report {target}: {e}') from e
    logger.info('Wrote report with %d models and %d cell formats', len(fits), pair.fmt.created)


__all__ = ['WorkbookPair', 'WorksheetTriplet', 'cell_format', 'write_table', 'write_note', 'write_model_sheet',
           'write_report']
