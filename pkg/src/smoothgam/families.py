"""Response distributions with their link, variance, deviance and log-density.

Classes come with prototype instances, :data:`Gaussian`, :data:`Gamma` and :data:`Tweedie`, that are refined with
fluent builders:

Examples:
    >>> Tweedie.with_power(1.5).descriptor
    'tweedie(link=log, p=1.5)'
    >>> from_descriptor('gamma(link=log)') == Gamma
    True
"""
import logging
import re
from typing import ClassVar, Dict, Optional, Type, TypeVar

import numpy as np
from attr import attrs, evolve
from scipy.special import gammaln, logsumexp

from .errors import DomainError, EvaluationError, ParseError

logger = logging.getLogger(__name__)

T = TypeVar('T')

_MAX_ETA = 700.0


@attrs(auto_attribs=True, frozen=True, order=False)
class Link(object):
    """Base class for links g, with η = g(μ)."""
    NAME: ClassVar[str] = ''

    def apply(self, mu: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def invert(self, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mu_eta(self, eta: np.ndarray) -> np.ndarray:
        """dμ/dη evaluated at η."""
        raise NotImplementedError

    def valid_mu(self, mu: np.ndarray) -> bool:
        return bool(np.all(np.isfinite(mu)))


@attrs(auto_attribs=True, frozen=True, order=False)
class IdentityLink(Link):
    NAME = 'identity'

    def apply(self, mu):
        return np.asarray(mu, dtype=float)

    def invert(self, eta):
        return np.asarray(eta, dtype=float)

    def mu_eta(self, eta):
        return np.ones_like(np.asarray(eta, dtype=float))


@attrs(auto_attribs=True, frozen=True, order=False)
class LogLink(Link):
    NAME = 'log'

    def apply(self, mu):
        mu = np.asarray(mu, dtype=float)
        if np.any(mu <= 0):
            raise DomainError('The log link needs a strictly positive mean')
        return np.log(mu)

    def invert(self, eta):
        return np.exp(np.minimum(np.asarray(eta, dtype=float), _MAX_ETA))

    def mu_eta(self, eta):
        return self.invert(eta)

    def valid_mu(self, mu):
        return bool(np.all(np.isfinite(mu)) and np.all(mu > 0))


Identity = IdentityLink()
Log = LogLink()

LINKS: Dict[str, Link] = {link.NAME: link for link in (Identity, Log)}


@attrs(auto_attribs=True, frozen=True, order=False)
class Family(object):
    """Base class for the response distribution D(μ, φ).

    Attributes:
        link: The link function.
        phi: Scale parameter; estimated after fitting and filled in with :meth:`with_phi`.
    """
    KIND: ClassVar[str] = ''
    POSITIVE_MEAN: ClassVar[bool] = False

    link: Link = Identity
    phi: Optional[float] = None

    def with_link(self: T, link) -> T:
        if isinstance(link, str):
            try:
                link = LINKS[link]
            except KeyError:
                raise ParseError(f'Unknown link {link!r}, expected one of {sorted(LINKS)}') from None
        return evolve(self, link=link)

    def with_phi(self: T, phi: Optional[float]) -> T:
        return evolve(self, phi=None if phi is None else float(phi))

    def link_apply(self, mu: np.ndarray) -> np.ndarray:
        return self.link.apply(mu)

    def link_invert(self, eta: np.ndarray) -> np.ndarray:
        return self.link.invert(eta)

    def link_derivative(self, eta: np.ndarray) -> np.ndarray:
        return self.link.mu_eta(eta)

    @property
    def descriptor(self) -> str:
        return f'{self.KIND}(link={self.link.NAME})'

    @property
    def n_scale_parameters(self) -> int:
        """Distribution constants counted as estimated parameters in AIC."""
        return 1

    def check_response(self, y: np.ndarray) -> None:
        pass

    def check_mu(self, mu: np.ndarray) -> None:
        mu = np.asarray(mu, dtype=float)
        if not np.all(np.isfinite(mu)) or (self.POSITIVE_MEAN and np.any(mu <= 0)):
            raise DomainError(f'{self.KIND} means must be finite' + (' and positive' if self.POSITIVE_MEAN else ''))

    def variance(self, mu: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def unit_deviance(self, y: np.ndarray, mu: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def deviance(self, y: np.ndarray, mu: np.ndarray, weights: Optional[np.ndarray] = None) -> float:
        """Σ w_i d(y_i, μ_i)."""
        d = self.unit_deviance(y, mu)
        return float(np.sum(d if weights is None else np.asarray(weights) * d))

    def log_density(self, y: np.ndarray, mu: np.ndarray, phi: float,
                    weights: Optional[np.ndarray] = None) -> np.ndarray:
        """log f(y_i) with dispersion φ/w_i."""
        raise NotImplementedError

    def log_likelihood(self, y: np.ndarray, mu: np.ndarray, phi: float,
                       weights: Optional[np.ndarray] = None) -> float:
        return float(np.sum(self.log_density(y, mu, phi, weights)))

    def deviance_residuals(self, y: np.ndarray, mu: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
        d = self.unit_deviance(y, mu)
        if weights is not None:
            d = d * weights
        return np.sign(np.asarray(y) - mu) * np.sqrt(np.maximum(d, 0.0))

    def pearson_residuals(self, y: np.ndarray, mu: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
        r = (np.asarray(y) - mu) / np.sqrt(self.variance(mu))
        return r if weights is None else r * np.sqrt(weights)

    def initial_mu(self, y: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Starting means for PIRLS, kept inside the domain of the link."""
        y = np.asarray(y, dtype=float)
        if self.POSITIVE_MEAN or isinstance(self.link, LogLink):
            centre = max(float(np.average(y, weights=weights)), 1e-8)
            return (y + centre) / 2.0
        return y.copy()


@attrs(auto_attribs=True, frozen=True, order=False)
class GaussianFamily(Family):
    KIND = 'gaussian'

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def unit_deviance(self, y, mu):
        return (np.asarray(y, dtype=float) - mu) ** 2

    def log_density(self, y, mu, phi, weights=None):
        scale = phi / (1.0 if weights is None else np.asarray(weights, dtype=float))
        return -0.5 * np.log(2 * np.pi * scale) - (np.asarray(y, dtype=float) - mu) ** 2 / (2 * scale)

    @property
    def descriptor(self):
        return self.KIND if self.link is Identity else super().descriptor


@attrs(auto_attribs=True, frozen=True, order=False)
class GammaFamily(Family):
    KIND = 'gamma'
    POSITIVE_MEAN = True

    link: Link = Log

    def check_response(self, y):
        if np.any(np.asarray(y) <= 0):
            raise DomainError('gamma responses must be strictly positive')

    def variance(self, mu):
        return np.asarray(mu, dtype=float) ** 2

    def unit_deviance(self, y, mu):
        y = np.asarray(y, dtype=float)
        self.check_response(y)
        self.check_mu(mu)
        return 2.0 * ((y - mu) / mu - np.log(y / mu))

    def log_density(self, y, mu, phi, weights=None):
        y = np.asarray(y, dtype=float)
        self.check_response(y)
        shape = (1.0 if weights is None else np.asarray(weights, dtype=float)) / phi
        return shape * np.log(shape * y / mu) - shape * y / mu - np.log(y) - gammaln(shape)


def _tweedie_log_series(y: float, phi: float, power: float, rel_tol: float, max_terms: int) -> float:
    """log of the compound Poisson series W(y, φ, p) summed outward from its dominant index."""
    alpha = (2.0 - power) / (1.0 - power)
    log_z = -alpha * np.log(y) + alpha * np.log(power - 1.0) - (1.0 - alpha) * np.log(phi) - np.log(2.0 - power)

    def log_terms(j):
        return j * log_z - gammaln(1.0 + j) - gammaln(-j * alpha)

    j_max = max(1.0, np.round(y ** (2.0 - power) / (phi * (2.0 - power))))
    peak = float(log_terms(j_max))
    cutoff = peak + np.log(rel_tol)
    block = 64

    upper = [np.array([peak])]
    j = j_max
    while True:
        js = j + np.arange(1, block + 1)
        terms = log_terms(js)
        upper.append(terms)
        j = js[-1]
        if terms[-1] < cutoff and np.all(np.diff(terms) <= 0):
            break
        if j - j_max > max_terms:
            raise EvaluationError(f'Tweedie series did not converge within {max_terms} terms '
                                  f'(y={y!r}, phi={phi!r}, p={power!r})')

    lower = []
    j = j_max
    while j > 1:
        js = np.arange(max(1.0, j - block), j)[::-1]
        terms = log_terms(js)
        lower.append(terms)
        j = js[-1]
        if terms[-1] < cutoff:
            break

    log_w = logsumexp(np.concatenate(upper + lower))
    if not np.isfinite(log_w):
        raise EvaluationError(f'Tweedie series evaluated to {log_w} (y={y!r}, phi={phi!r}, p={power!r})')
    return float(log_w)


@attrs(auto_attribs=True, frozen=True, order=False)
class TweedieFamily(Family):
    """Tweedie distribution with variance φ μ^p, 1 < p < 2.

    Attributes:
        power: The power p; ``None`` until estimated or given explicitly.
        power_estimated: p was profiled from the data, so AIC counts it as a parameter.
    """
    KIND = 'tweedie'
    POSITIVE_MEAN = True
    SERIES_REL_TOL: ClassVar[float] = 1e-17
    SERIES_MAX_TERMS: ClassVar[int] = 1_000_000

    link: Link = Log
    power: Optional[float] = None
    power_estimated: bool = False

    def __attrs_post_init__(self):
        if self.power is not None and not 1.0 < self.power < 2.0:
            raise DomainError(f'Tweedie power must lie strictly inside (1, 2), got {self.power}')

    def with_power(self: T, power: Optional[float], estimated: bool = False) -> T:
        return evolve(self, power=None if power is None else float(power), power_estimated=bool(estimated))

    @property
    def p(self) -> float:
        if self.power is None:
            raise DomainError('Tweedie power has not been set or estimated')
        return self.power

    @property
    def descriptor(self):
        if self.power is None:
            return super().descriptor
        estimated = ', estimated=true' if self.power_estimated else ''
        return f'{self.KIND}(link={self.link.NAME}, p={self.power!r}{estimated})'

    @property
    def n_scale_parameters(self):
        return 2 if self.power_estimated else 1

    def check_response(self, y):
        if np.any(np.asarray(y) < 0):
            raise DomainError('tweedie responses must be non-negative')

    def variance(self, mu):
        return np.asarray(mu, dtype=float) ** self.p

    def unit_deviance(self, y, mu):
        y = np.asarray(y, dtype=float)
        mu = np.asarray(mu, dtype=float)
        self.check_response(y)
        self.check_mu(mu)
        p = self.p
        positive = y > 0
        y_part = np.zeros_like(y)
        y_part[positive] = (y[positive] ** (2 - p) / ((1 - p) * (2 - p))
                            - y[positive] * mu[positive] ** (1 - p) / (1 - p))
        return 2.0 * (y_part + mu ** (2 - p) / (2 - p))

    def log_density(self, y, mu, phi, weights=None, rel_tol: Optional[float] = None):
        y = np.asarray(y, dtype=float)
        mu = np.broadcast_to(np.asarray(mu, dtype=float), y.shape)
        self.check_response(y)
        self.check_mu(mu)
        if not phi > 0 or not np.isfinite(phi):
            raise EvaluationError(f'Tweedie dispersion must be positive and finite, got {phi!r}')
        p = self.p
        scale = np.broadcast_to(phi / (1.0 if weights is None else np.asarray(weights, dtype=float)), y.shape)
        rel_tol = self.SERIES_REL_TOL if rel_tol is None else rel_tol
        out = -mu ** (2 - p) / (scale * (2 - p))
        for i in np.flatnonzero(y > 0):
            log_w = _tweedie_log_series(y[i], scale[i], p, rel_tol, self.SERIES_MAX_TERMS)
            out[i] = (-np.log(y[i]) + log_w
                      + (y[i] * mu[i] ** (1 - p) / (1 - p) - mu[i] ** (2 - p) / (2 - p)) / scale[i])
        return out


def simulate_tweedie(mu: np.ndarray, phi: float, power: float, rng: np.random.Generator) -> np.ndarray:
    """Draw Tweedie responses as compound Poisson sums of gamma variables."""
    mu = np.asarray(mu, dtype=float)
    rate = mu ** (2 - power) / (phi * (2 - power))
    counts = rng.poisson(rate)
    shape = (2 - power) / (power - 1)
    scale = phi * (power - 1) * mu ** (power - 1)
    y = np.zeros_like(mu)
    positive = counts > 0
    y[positive] = rng.gamma(counts[positive] * shape, scale[positive])
    return y


Gaussian = GaussianFamily()
Gamma = GammaFamily()
Tweedie = TweedieFamily()

FAMILIES: Dict[str, Family] = {family.KIND: family for family in (Gaussian, Gamma, Tweedie)}

_DESCRIPTOR = re.compile(r'^\s*(?P<kind>[a-z]+)\s*(?:\(\s*(?P<args>[^)]*)\))?\s*$')


def from_descriptor(text: str) -> Family:
    """Parse ``gaussian``, ``gamma(link=log)``, ``tweedie(link=log, p=1.5)`` and the like.

    Raises:
        ParseError: Unknown family, link or argument.
    """
    match = _DESCRIPTOR.match(text.lower())
    if not match or match.group('kind') not in FAMILIES:
        raise ParseError(f'Unknown family {text!r}, expected one of {sorted(FAMILIES)}')
    family = FAMILIES[match.group('kind')]
    args = [arg.strip() for arg in (match.group('args') or '').split(',') if arg.strip()]
    estimated = False
    for arg in args:
        name, sep, value = (part.strip() for part in arg.partition('='))
        if not sep:
            raise ParseError(f'Family argument {arg!r} must be name=value')
        if name == 'link':
            family = family.with_link(value)
        elif name in ('p', 'power') and isinstance(family, TweedieFamily):
            try:
                family = family.with_power(float(value))
            except ValueError:
                raise ParseError(f'Tweedie power {value!r} is not a number') from None
        elif name == 'estimated' and isinstance(family, TweedieFamily) and value in ('true', 'false'):
            estimated = value == 'true'
        else:
            raise ParseError(f'Unknown argument {name!r} for family {family.KIND}')
    if estimated:
        if family.power is None:
            raise ParseError(f'Family {text!r} marks an estimated Tweedie power without giving p')
        family = family.with_power(family.power, estimated=True)
    return family


__all__ = ['Link', 'IdentityLink', 'LogLink', 'Identity', 'Log', 'Family', 'GaussianFamily', 'GammaFamily',
           'TweedieFamily', 'Gaussian', 'Gamma', 'Tweedie', 'simulate_tweedie', 'from_descriptor']
