from pprint import pformat
from typing import ClassVar, Optional


class GAMError(Exception):
    """Base smoothgam error.

    Every concrete error names the module it originates from and a short kind, which together form the
    machine-parseable prefix the command line prints, ``ERROR:<module>:<kind>:``.

    Examples:
        >>> str(ParseError("unexpected token", position=7))
        'unexpected token\\nAdditional info:\\nPosition: 7'
        >>> ParseError("unexpected token").prefix
        'ERROR:model_spec:parse:'
    """
    MODULE: ClassVar[str] = 'smoothgam'
    KIND: ClassVar[str] = 'error'
    EXIT_CODE: ClassVar[int] = 1

    def __init__(self, message, row=None, column=None, term=None, position=None, trace=None, last_iterate=None):
        super().__init__(message)
        self.message = message
        self.row = row
        self.column = column
        self.term = term
        self.position = position
        self.trace = trace
        self.last_iterate = last_iterate

    @property
    def prefix(self) -> str:
        return f'ERROR:{self.MODULE}:{self.KIND}:'

    def __str__(self):
        segments = []
        if self.row is not None:
            segments.append(f"Row: {self.row}")
        if self.column is not None:
            segments.append(f"Column: {self.column}")
        if self.term is not None:
            segments.append(f"Term: {self.term}")
        if self.position is not None:
            segments.append(f"Position: {self.position}")
        if self.trace is not None:
            segments.append(f"Trace (last entries): {pformat(list(self.trace)[-5:])}")
        if self.last_iterate is not None:
            segments.append(f"Last iterate: {pformat(self.last_iterate)}")
        additional_info = "\n".join(segments)

        full_message = [self.message]
        if additional_info:
            full_message.append(f"Additional info:\n{additional_info}")

        return "\n".join(full_message)

    def one_line(self) -> str:
        """The prefix followed by the message and context collapsed into a single line."""
        return f"{self.prefix} {' | '.join(str(self).splitlines())}"


class InputError(GAMError):
    """Errors caused by the data or model description supplied by the user."""
    EXIT_CODE = 2


class NumericalError(GAMError):
    """Errors caused by a numerical procedure failing on otherwise valid input."""
    EXIT_CODE = 4


class DataIOError(InputError):
    """A data file could not be read or written."""
    MODULE = 'data_model'
    KIND = 'io'


class SchemaError(InputError):
    """A declared column is missing or of the wrong kind."""
    MODULE = 'data_model'
    KIND = 'schema'


class DataParseError(InputError):
    """A token could not be parsed as a number."""
    MODULE = 'data_model'
    KIND = 'parse'


class ValidationError(InputError):
    """Values are parseable but violate a data invariant."""
    MODULE = 'data_model'
    KIND = 'validation'


class BasisDimensionError(InputError):
    """The covariate cannot support the requested basis dimension."""
    MODULE = 'basis_engine'
    KIND = 'basis_dimension'


class BasisRankError(InputError):
    """The covariate does not carry enough distinct values to build the basis."""
    MODULE = 'basis_engine'
    KIND = 'rank'


class UnsupportedPenaltyError(InputError):
    MODULE = 'basis_engine'
    KIND = 'unsupported_penalty'


class ExtrapolationError(InputError):
    """A basis was evaluated outside the support it was built on."""
    MODULE = 'basis_engine'
    KIND = 'extrapolation'
    EXIT_CODE = 3


class DomainError(InputError):
    """A value lies outside the domain of a link, variance or density."""
    MODULE = 'families'
    KIND = 'domain'


class EvaluationError(NumericalError):
    MODULE = 'families'
    KIND = 'evaluation'


class ParseError(InputError):
    """The model formula could not be parsed."""
    MODULE = 'model_spec'
    KIND = 'parse'


class SpecificationError(InputError):
    """A parsed term is inconsistent with the data it is assembled against."""
    MODULE = 'model_spec'
    KIND = 'specification'


class RankError(NumericalError):
    """The penalized normal equations are singular."""
    MODULE = 'fitter'
    KIND = 'rank'


class ConvergenceError(NumericalError):
    MODULE = 'fitter'
    KIND = 'convergence'


class OptimizationError(NumericalError):
    MODULE = 'fitter'
    KIND = 'optimization'


class DegenerateCriterionError(NumericalError):
    """The smoothness criterion is undefined at the requested smoothing parameters."""
    MODULE = 'fitter'
    KIND = 'degenerate'


class RequestError(GAMError):
    """An inference request does not fit the model it targets."""
    MODULE = 'inference'
    KIND = 'request'
    EXIT_CODE = 3


class NothingToCompareError(RequestError):
    KIND = 'nothing_to_compare'


class ComparisonError(InputError):
    """Models whose likelihoods are not comparable were compared."""
    MODULE = 'cli'
    KIND = 'comparison'


class ArchiveError(InputError):
    """A model archive is malformed or of an unsupported version."""
    MODULE = 'cli'
    KIND = 'archive'


class ReportError(InputError):
    """A spreadsheet report could not be built or written."""
    MODULE = 'cli'
    KIND = 'report'


def exit_code_for(error: Optional[BaseException]) -> int:
    if error is None:
        return 0
    if isinstance(error, GAMError):
        return error.EXIT_CODE
    return 1
