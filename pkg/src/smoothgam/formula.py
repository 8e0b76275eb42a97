"""The model grammar.

A formula reads ``response ~ term + term + ...`` where a term is ``1`` (the intercept), a column name (a linear
covariate or a parametric factor), ``log(x)``, ``s(x, k=9, bs="bs")``, ``s(x, by=f)``, ``sz(x, f1, f2)``,
``fs(x, f, k=6)`` or ``ri(f)``. The intercept is implicit when ``1`` is omitted.

Examples:
    >>> [term.label for term in parse_formula('y ~ 1 + s(day, k=9)')]
    ['(Intercept)', 's(day)']
"""
import re
from typing import Iterator, List, NamedTuple, Optional, Tuple

from attr import attrs

from .data import Dataset
from .errors import ParseError
from .terms import instances
from .terms.classes import FactorTerm, LinearTerm, Term

_TOKEN = re.compile(r'''
    (?P<space>\s+)
  | (?P<number>[0-9]+(?:\.[0-9]*)?(?:[eE][-+]?[0-9]+)?)
  | (?P<name>[A-Za-z_.][A-Za-z0-9_.]*)
  | (?P<string>"[^"]*"|'[^']*')
  | (?P<punct>[~+(),=])
''', re.VERBOSE)

SMOOTH_FUNCTIONS = ('s', 'sz', 'fs', 'ri', 'log')


class Token(NamedTuple):
    kind: str
    text: str
    position: int


def tokenize(text: str) -> Iterator[Token]:
    position = 0
    while position < len(text):
        match = _TOKEN.match(text, position)
        if match is None:
            raise ParseError(f'Unexpected character {text[position]!r}', position=position)
        if match.lastgroup != 'space':
            value = match.group()
            yield Token(match.lastgroup, value.strip('"\'') if match.lastgroup == 'string' else value, position)
        position = match.end()
    yield Token('end', '', len(text))


@attrs(auto_attribs=True, frozen=True, order=False)
class Formula(object):
    """A parsed formula: the response name and the ordered terms."""
    text: str
    response: Optional[str]
    terms: Tuple[Term, ...]

    @property
    def labels(self) -> List[str]:
        return [term.label for term in self.terms]


class _Parser(object):
    def __init__(self, text: str, data: Optional[Dataset]):
        self.text = text
        self.data = data
        self.tokens = list(tokenize(text))
        self.index = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.index]

    def advance(self) -> Token:
        token = self.current
        self.index += 1
        return token

    def expect(self, kind: str, text: Optional[str] = None) -> Token:
        token = self.current
        if token.kind != kind or (text is not None and token.text != text):
            wanted = text or kind
            found = token.text or 'end of formula'
            raise ParseError(f'Expected {wanted!r}, found {found!r}', position=token.position)
        return self.advance()

    def check_column(self, token: Token, factor: Optional[bool] = None) -> str:
        name = token.text
        if self.data is None:
            return name
        if name not in self.data:
            raise ParseError(f'Unknown column {name!r}', position=token.position)
        is_factor = self.data.column(name).is_factor
        if factor is True and not is_factor:
            raise ParseError(f'Column {name!r} must be a factor here', position=token.position)
        if factor is False and is_factor:
            raise ParseError(f'Column {name!r} must be numeric here', position=token.position)
        return name

    def parse(self) -> Formula:
        response = None
        if any(token.kind == 'punct' and token.text == '~' for token in self.tokens):
            response_token = self.expect('name')
            response = self.check_column(response_token, factor=False)
            self.expect('punct', '~')
        terms: List[Term] = []
        seen = {}
        intercept = None
        while True:
            token = self.current
            if token.kind == 'number':
                if token.text != '1':
                    raise ParseError(f'Only the intercept 1 may appear as a bare number, found {token.text!r}',
                                     position=token.position)
                if intercept is not None:
                    raise ParseError('Duplicate intercept', position=token.position)
                self.advance()
                intercept = instances.Intercept
            else:
                term = self.parse_term()
                if term.label in seen:
                    raise ParseError(f'Duplicate term {term.label}', position=token.position)
                seen[term.label] = token.position
                terms.append(term)
            if self.current.kind == 'end':
                break
            self.expect('punct', '+')
        return Formula(self.text, response, (intercept or instances.Intercept, *terms))

    def parse_term(self) -> Term:
        name = self.expect('name')
        if not (self.current.kind == 'punct' and self.current.text == '('):
            self.check_column(name)
            if self.data is not None and self.data.column(name.text).is_factor:
                return instances.Factor.on(name.text)
            return instances.Linear.on(name.text)
        if name.text not in SMOOTH_FUNCTIONS:
            raise ParseError(f'Unknown function {name.text!r}, expected one of {list(SMOOTH_FUNCTIONS)}',
                             position=name.position)
        self.expect('punct', '(')
        positional, keywords = self.parse_arguments()
        self.expect('punct', ')')
        return getattr(self, f'build_{name.text}')(name, positional, keywords)

    def parse_arguments(self):
        positional: List[Token] = []
        keywords = {}
        while True:
            token = self.current
            if token.kind not in ('name', 'number', 'string'):
                raise ParseError(f'Expected an argument, found {token.text or "end of formula"!r}',
                                 position=token.position)
            self.advance()
            if self.current.kind == 'punct' and self.current.text == '=':
                self.advance()
                value = self.current
                if value.kind not in ('name', 'number', 'string'):
                    raise ParseError(f'Expected a value for {token.text!r}', position=value.position)
                self.advance()
                if token.text in keywords:
                    raise ParseError(f'Duplicate argument {token.text!r}', position=token.position)
                keywords[token.text] = value
            elif keywords:
                raise ParseError('Positional argument after keyword arguments', position=token.position)
            else:
                positional.append(token)
            if self.current.kind == 'punct' and self.current.text == ',':
                self.advance()
                continue
            return positional, keywords

    @staticmethod
    def reject_unknown(function: Token, keywords, allowed):
        for key, value in keywords.items():
            if key not in allowed:
                raise ParseError(f'Unknown argument {key!r} for {function.text}()', position=value.position)

    def apply_basis(self, term, keywords):
        if 'k' in keywords:
            token = keywords['k']
            if token.kind != 'number' or not token.text.isdigit() or int(token.text) < 1:
                raise ParseError(f'k must be a positive integer, found {token.text!r}', position=token.position)
            term = term.with_k(int(token.text))
        if 'bs' in keywords:
            try:
                term = term.with_basis(keywords['bs'].text)
            except ParseError as e:
                raise ParseError(e.message, position=keywords['bs'].position) from None
        return term

    @staticmethod
    def count(function: Token, positional, minimum: int, maximum: Optional[int]):
        if len(positional) < minimum or (maximum is not None and len(positional) > maximum):
            expected = minimum if maximum == minimum else f'{minimum} or more' if maximum is None else \
                f'{minimum} to {maximum}'
            raise ParseError(f'{function.text}() takes {expected} column arguments, got {len(positional)}',
                             position=function.position)

    def build_log(self, function, positional, keywords):
        self.count(function, positional, 1, 1)
        self.reject_unknown(function, keywords, ())
        return instances.LogLinear.on(self.check_column(positional[0], factor=False))

    def build_s(self, function, positional, keywords):
        self.count(function, positional, 1, 1)
        self.reject_unknown(function, keywords, ('k', 'bs', 'by'))
        covariate = self.check_column(positional[0], factor=False)
        if 'by' in keywords:
            term = instances.BySmooth.on(covariate).by(self.check_column(keywords['by'], factor=True))
        else:
            term = instances.Smooth.on(covariate)
        return self.apply_basis(term, keywords)

    def build_sz(self, function, positional, keywords):
        self.count(function, positional, 2, None)
        self.reject_unknown(function, keywords, ('k', 'bs'))
        covariate = self.check_column(positional[0], factor=False)
        factors = [self.check_column(token, factor=True) for token in positional[1:]]
        return self.apply_basis(instances.ConstrainedInteraction.on(covariate).by(*factors), keywords)

    def build_fs(self, function, positional, keywords):
        self.count(function, positional, 2, 2)
        self.reject_unknown(function, keywords, ('k', 'bs'))
        covariate = self.check_column(positional[0], factor=False)
        factor = self.check_column(positional[1], factor=True)
        return self.apply_basis(instances.RandomSmooth.on(covariate).by(factor), keywords)

    def build_ri(self, function, positional, keywords):
        self.count(function, positional, 1, 1)
        self.reject_unknown(function, keywords, ())
        return instances.RandomIntercept.on(self.check_column(positional[0], factor=True))


def parse(text: str, data: Optional[Dataset] = None) -> Formula:
    """Parse `text`; when `data` is given, column names are checked and bare names resolve to linear or factor
    terms by column kind."""
    return _Parser(text, data).parse()


def parse_formula(text: str, data: Optional[Dataset] = None) -> List[Term]:
    """The ordered term list of `text`, intercept first.

    Raises:
        ParseError: Unknown function or column, malformed arguments, or a duplicate intercept; the error carries
            the character position.
    """
    return list(parse(text, data).terms)


def resolve_terms(terms: List[Term], data: Dataset) -> List[Term]:
    """Promote bare linear names that refer to factor columns into parametric factors."""
    resolved = []
    for term in terms:
        if isinstance(term, LinearTerm) and term.transform is None and term.covariate in data \
                and data.column(term.covariate).is_factor:
            term = FactorTerm(covariate=term.covariate)
        resolved.append(term)
    return resolved


__all__ = ['Formula', 'Token', 'tokenize', 'parse', 'parse_formula', 'resolve_terms']
