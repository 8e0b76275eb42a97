from collections import defaultdict
from typing import Any, Dict

from attr import Factory, attrs
from xlsxwriter import Workbook as XlsxWriterWorkbook
from xlsxwriter.format import Format

from .errors import ReportError


class FormatDict(Dict[str, Any]):
    """xlsxwriter format properties that compose with ``|`` (right side wins) and hash by content.

    Examples:
        >>> F = FormatDict
        >>> F({'bold': True}) | F({'num_format': '0.000'}) == F({'num_format': '0.000', 'bold': True})
        True
        >>> hash(F({'bold': True}) | F({'italic': True})) == hash(F({'italic': True, 'bold': True}))
        True
    """

    def __or__(self, other):
        merged = FormatDict(self)
        merged.update(other)
        return merged

    def __ror__(self, other):
        return FormatDict(other) | self

    def __hash__(self):
        return hash(frozenset(self.items()))


@attrs(auto_attribs=True)
class FormatHandler(object):
    """Creates each distinct report format on the workbook once; one handler per workbook."""
    target: XlsxWriterWorkbook
    _created: Dict[FormatDict, Format] = Factory(dict)

    @property
    def created(self) -> int:
        return len(self._created)

    def verify_format(self, format_: FormatDict) -> Format:
        key = FormatDict(format_)
        if key not in self._created:
            self._created[key] = self.target.add_format(dict(key))
        return self._created[key]


def ensure_format_uniqueness(class_):
    """Class decorator: every public attribute must be a FormatDict and no two may describe the same format."""
    owners = defaultdict(list)
    for name in (attr for attr in vars(class_) if not attr.startswith('_')):
        value = getattr(class_, name)
        if not isinstance(value, FormatDict):
            raise ReportError(f'Report format {name}={value!r} is not a FormatDict')
        owners[value].append(name)

    clashes = [names for names in owners.values() if len(names) > 1]
    if clashes:
        raise ReportError(f'Report formats {clashes} describe identical cell styles')

    return class_


@ensure_format_uniqueness
class ReportFormats(object):
    base = FormatDict({})
    default_font_name = base | {'font_name': 'Liberation Sans'}
    default_font_size = base | {'font_size': 10}
    default_header_size = base | {'font_size': 14}

    estimate = base | {'num_format': '0.000'}
    estimate_with_red = base | {'num_format': '0.000;[RED]-0.000'}
    p_value = base | {'num_format': '0.0000'}
    percent = base | {'num_format': '0.0%'}
    integer = base | {'num_format': '0'}

    left = base | {'align': 'left'}
    center = base | {'align': 'center', 'valign': 'vcenter'}
    right = base | {'align': 'right'}

    wrapped = base | {'text_wrap': True}
    bold = base | {'bold': True}
    italic = base | {'italic': True}

    bottom_border = base | {'bottom': 1}

    default_font = default_font_name | default_font_size | left
    default_font_bold = default_font | bold
    default_header = default_font_bold | default_header_size
    default_note = default_font | italic | wrapped

    table_column_header = default_font_bold | center | bottom_border | wrapped
    table_estimate = default_font_name | default_font_size | right | estimate
    table_difference = default_font_name | default_font_size | right | estimate_with_red
    table_p_value = default_font_name | default_font_size | right | p_value
    table_significant_p_value = table_p_value | bold
    table_percent = default_font_name | default_font_size | right | percent
    table_integer = default_font_name | default_font_size | right | integer


__all__ = ['FormatDict', 'FormatHandler', 'ReportFormats', 'ensure_format_uniqueness']
