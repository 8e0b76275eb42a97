"""Typed tabular data: numeric covariates, factors with an explicit level order, observation weights and the
response, read from and written to CSV."""
import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from attr import Factory, attrib, attrs, evolve

from .errors import DataIOError, DataParseError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

NUMERIC = 'numeric'
FACTOR = 'factor'

PathLike = Union[str, Path]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


def encode_factor(labels: Sequence[str], levels: Optional[Sequence[str]] = None) -> Tuple[np.ndarray, Tuple[str, ...]]:
    """Encode `labels` as integer codes into `levels`.

    Level order is the order of first appearance unless `levels` is given explicitly.

    Examples:
        >>> codes, levels = encode_factor(['M', 'F', 'M'])
        >>> codes.tolist(), levels
        ([0, 1, 0], ('M', 'F'))
    """
    labels = [str(label) for label in labels]
    if levels is None:
        levels = tuple(dict.fromkeys(labels))
    else:
        levels = tuple(str(level) for level in levels)
        if len(set(levels)) != len(levels):
            raise SchemaError(f'Duplicate levels in explicit level order {levels}')
    lookup = {level: code for code, level in enumerate(levels)}
    codes = np.empty(len(labels), dtype=np.int64)
    for row, label in enumerate(labels):
        try:
            codes[row] = lookup[label]
        except KeyError:
            raise SchemaError(f'Level {label!r} is not among the declared levels {list(levels)}', row=row) from None
    return codes, levels


@attrs(auto_attribs=True, frozen=True, eq=False)
class Column(object):
    """One column of a :class:`Dataset`.

    Attributes:
        kind: Either ``numeric`` or ``factor``.
        values: Float values for numeric columns, integer level codes for factors.
        levels: Ordered unique labels; empty for numeric columns.
    """
    kind: str
    values: np.ndarray = attrib(converter=_frozen)
    levels: Tuple[str, ...] = ()

    @classmethod
    def numeric(cls, values: Iterable[float]) -> 'Column':
        return cls(NUMERIC, np.asarray(values, dtype=float))

    @classmethod
    def factor(cls, labels: Sequence, levels: Optional[Sequence[str]] = None) -> 'Column':
        codes, levels = encode_factor(labels, levels)
        return cls(FACTOR, codes, levels)

    @property
    def is_factor(self) -> bool:
        return self.kind == FACTOR

    @property
    def labels(self) -> List[str]:
        if not self.is_factor:
            raise SchemaError('Numeric columns carry no labels')
        return [self.levels[code] for code in self.values]

    def take(self, index: np.ndarray) -> 'Column':
        return evolve(self, values=self.values[index])

    def equals(self, other: 'Column') -> bool:
        return (self.kind == other.kind and self.levels == other.levels
                and self.values.shape == other.values.shape and bool(np.all(self.values == other.values)))


@attrs(auto_attribs=True, frozen=True, order=False)
class Schema(object):
    """Column-kind declarations for :func:`load_csv`.

    Columns not mentioned are numeric when every token parses as a number and factors otherwise.

    Examples:
        >>> Schema().with_response('mass').with_factor('treat', ['Control', 'T4', 'T3', 'T3T4']).response
        'mass'
    """
    response: Optional[str] = None
    weights: Optional[str] = None
    factors: Dict[str, Optional[Tuple[str, ...]]] = Factory(dict)
    numeric: Tuple[str, ...] = ()

    def with_response(self, name: Optional[str]) -> 'Schema':
        return evolve(self, response=name)

    def with_weights(self, name: Optional[str]) -> 'Schema':
        return evolve(self, weights=name)

    def with_factor(self, name: str, levels: Optional[Sequence[str]] = None) -> 'Schema':
        return evolve(self, factors={**self.factors, name: None if levels is None else tuple(levels)})

    def with_numeric(self, *names: str) -> 'Schema':
        return evolve(self, numeric=(*self.numeric, *names))

    @property
    def declared(self) -> List[str]:
        names = [self.response, self.weights, *self.factors, *self.numeric]
        return [name for name in dict.fromkeys(names) if name is not None]

    def to_dict(self) -> dict:
        return {
            'response': self.response,
            'weights': self.weights,
            'factors': {name: None if levels is None else list(levels) for name, levels in self.factors.items()},
            'numeric': list(self.numeric),
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> 'Schema':
        unknown = set(payload) - {'response', 'weights', 'factors', 'numeric'}
        if unknown:
            raise SchemaError(f'Unknown schema keys {sorted(unknown)}')
        factors = payload.get('factors') or {}
        if isinstance(factors, list):
            factors = {name: None for name in factors}
        return cls(
            response=payload.get('response'),
            weights=payload.get('weights'),
            factors={name: None if levels is None else tuple(str(level) for level in levels)
                     for name, levels in factors.items()},
            numeric=tuple(payload.get('numeric') or ()),
        )

    @classmethod
    def from_json(cls, path: PathLike) -> 'Schema':
        try:
            with open(path, encoding='utf-8') as in_:
                payload = json.load(in_)
        except OSError as e:
            raise DataIOError(f'Cannot read schema file {path}: {e.strerror}') from e
        except json.JSONDecodeError as e:
            raise SchemaError(f'Schema file {path} is not valid JSON: {e.msg}', row=e.lineno) from e
        return cls.from_dict(payload)


@attrs(auto_attribs=True, frozen=True, eq=False)
class Dataset(object):
    """An immutable validated sample.

    Attributes:
        columns: Columns by name, in file order.
        n_rows: Number of rows shared by every column.
        response_name: Name of the numeric response column, if any. Prediction grids carry none.
        weight_name: Name of the prior weight column, if any. Absent weights mean all weights are 1.
    """
    columns: Dict[str, Column]
    n_rows: int
    response_name: Optional[str] = None
    weight_name: Optional[str] = None

    def __attrs_post_init__(self):
        for name, column in self.columns.items():
            if column.values.shape != (self.n_rows,):
                raise ValidationError(f'Column has {column.values.shape[0]} entries, expected {self.n_rows}',
                                      column=name)
        if self.response_name is not None:
            response = self._require(self.response_name)
            if response.is_factor:
                raise SchemaError('The response must be numeric', column=self.response_name)
            bad = np.flatnonzero(~np.isfinite(response.values))
            if bad.size:
                raise ValidationError('The response must be finite', column=self.response_name, row=int(bad[0]))
        if self.weight_name is not None:
            weights = self._require(self.weight_name)
            if weights.is_factor:
                raise SchemaError('Weights must be numeric', column=self.weight_name)
            bad = np.flatnonzero(~(np.isfinite(weights.values) & (weights.values > 0)))
            if bad.size:
                raise ValidationError('Weights must be strictly positive and finite', column=self.weight_name,
                                      row=int(bad[0]))

    @classmethod
    def from_columns(cls, data: Mapping[str, Union[Sequence, Column]], response: Optional[str] = None,
                     weights: Optional[str] = None, factors: Union[Iterable[str], Mapping] = ()) -> 'Dataset':
        """Build a Dataset from in-memory columns.

        Examples:
            >>> ds = Dataset.from_columns({'x': [1, 2, 3], 'y': [2, 3, 5]}, response='y')
            >>> ds.n_rows, ds.response_name
            (3, 'y')
        """
        if not isinstance(factors, Mapping):
            factors = {name: None for name in factors}
        columns = {}
        for name, values in data.items():
            if isinstance(values, Column):
                columns[name] = values
            elif name in factors:
                columns[name] = Column.factor(values, factors[name])
            else:
                columns[name] = Column.numeric(values)
        sizes = {column.values.shape[0] for column in columns.values()}
        if len(sizes) > 1:
            raise ValidationError(f'Columns have differing lengths {sorted(sizes)}')
        return cls(columns, sizes.pop() if sizes else 0, response, weights)

    def _require(self, name: str) -> Column:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError('Column not present in the data', column=name) from None

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    def column(self, name: str) -> Column:
        return self._require(name)

    def numeric(self, name: str) -> np.ndarray:
        column = self._require(name)
        if column.is_factor:
            raise SchemaError('Expected a numeric column, found a factor', column=name)
        return column.values

    def factor(self, name: str) -> Column:
        column = self._require(name)
        if not column.is_factor:
            raise SchemaError('Expected a factor column, found a numeric one', column=name)
        return column

    @property
    def y(self) -> np.ndarray:
        if self.response_name is None:
            raise SchemaError('The data declares no response column')
        return self.numeric(self.response_name)

    @property
    def weights(self) -> np.ndarray:
        if self.weight_name is None:
            return np.ones(self.n_rows)
        return self.numeric(self.weight_name)

    @property
    def schema(self) -> Schema:
        """A schema that reproduces this Dataset's kinds and level orders when reloading a written copy."""
        return Schema(
            response=self.response_name,
            weights=self.weight_name,
            factors={name: column.levels for name, column in self.columns.items() if column.is_factor},
            numeric=tuple(name for name, column in self.columns.items() if not column.is_factor),
        )

    def subset(self, mask: np.ndarray) -> 'Dataset':
        """Rows selected by a boolean mask or an index array; factor levels are kept as they are."""
        index = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask, dtype=int)
        return evolve(self, columns={name: column.take(index) for name, column in self.columns.items()},
                      n_rows=int(index.size))

    def with_column(self, name: str, column: Column) -> 'Dataset':
        return evolve(self, columns={**self.columns, name: column})

    def equals(self, other: 'Dataset') -> bool:
        return (self.n_rows == other.n_rows and list(self.columns) == list(other.columns)
                and self.response_name == other.response_name and self.weight_name == other.weight_name
                and all(column.equals(other.columns[name]) for name, column in self.columns.items()))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            name: pd.Categorical(column.labels, categories=list(column.levels)) if column.is_factor else column.values
            for name, column in self.columns.items()
        })

    def fingerprint(self) -> dict:
        """Row count, column names and a SHA-256 digest of the canonical content."""
        digest = hashlib.sha256()
        for name, column in self.columns.items():
            digest.update(json.dumps([name, column.kind, list(column.levels)]).encode('utf-8'))
            if column.is_factor:
                digest.update(column.values.astype('<i8').tobytes())
            else:
                digest.update(column.values.astype('<f8').tobytes())
        return {'n_rows': self.n_rows, 'columns': list(self.columns), 'sha256': digest.hexdigest()}


def _parse_numeric(name: str, tokens: pd.Series) -> np.ndarray:
    values = np.empty(len(tokens))
    for row, token in enumerate(tokens):
        token = token.strip()
        if not token:
            raise ValidationError('Missing value', column=name, row=row)
        try:
            values[row] = float(token)
        except ValueError:
            raise DataParseError(f'Cannot parse {token!r} as a number', column=name, row=row) from None
    return values


def _looks_numeric(tokens: pd.Series) -> bool:
    try:
        [float(token) for token in tokens if token.strip()]
    except ValueError:
        return False
    return True


def load_csv(path: PathLike, schema: Optional[Schema] = None) -> Dataset:
    """Read and validate a header-first, UTF-8 CSV file.

    Numbers are parsed with a dot decimal separator regardless of locale. Factor levels follow the order of
    first appearance unless the schema gives an explicit order. Missing values are rejected.

    Args:
        path: The CSV file.
        schema: Column declarations; when omitted, every column is inferred and there is no response.

    Raises:
        DataIOError: The file cannot be read.
        SchemaError: A declared column is absent.
        DataParseError: A numeric column holds a non-numeric token; the error names the row.
        ValidationError: Missing values, non-finite response or non-positive weights.
    """
    schema = schema or Schema()
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding='utf-8')
    except FileNotFoundError as e:
        raise DataIOError(f'Data file {path} does not exist') from e
    except OSError as e:
        raise DataIOError(f'Cannot read data file {path}: {e}') from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataIOError(f'Data file {path} is not a readable CSV file: {e}') from e

    frame.columns = [str(name).strip() for name in frame.columns]
    for name in schema.declared:
        if name not in frame.columns:
            raise SchemaError('Declared column is missing from the data file', column=name)

    columns = {}
    for name in frame.columns:
        tokens = frame[name]
        if name in schema.factors:
            labels = [token.strip() for token in tokens]
            empty = [row for row, label in enumerate(labels) if not label]
            if empty:
                raise ValidationError('Missing value', column=name, row=empty[0])
            columns[name] = Column.factor(labels, schema.factors[name])
        elif name in (schema.response, schema.weights) or name in schema.numeric or _looks_numeric(tokens):
            columns[name] = Column.numeric(_parse_numeric(name, tokens))
        else:
            columns[name] = Column.factor([token.strip() for token in tokens])

    dataset = Dataset(columns, len(frame), schema.response, schema.weights)
    logger.debug('Loaded %d rows with columns %s from %s', dataset.n_rows, list(columns), path)
    return dataset


def write_csv(dataset: Dataset, path: PathLike) -> None:
    """Write `dataset` as CSV; numbers keep 17 significant digits so that reloading reproduces them exactly."""
    try:
        dataset.to_frame().to_csv(path, index=False, float_format='%.17g', encoding='utf-8', lineterminator='\n')
    except OSError as e:
        raise DataIOError(f'Cannot write data file {path}: {e}') from e


__all__ = ['NUMERIC', 'FACTOR', 'Column', 'Dataset', 'Schema', 'encode_factor', 'load_csv', 'write_csv']
