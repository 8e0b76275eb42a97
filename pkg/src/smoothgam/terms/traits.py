from typing import ClassVar, Optional, Tuple, TypeVar

from attr import attrs, evolve

from ..basis import BSPLINE, TPRS
from ..errors import ParseError

T = TypeVar('T')

BASIS_CODES = {'tp': TPRS, 'bs': BSPLINE, TPRS: TPRS, BSPLINE: BSPLINE}


@attrs(auto_attribs=True)
class Trait(object):
    pass


@attrs(auto_attribs=True, frozen=True, order=False)
class Covariate(Trait):
    """Terms with this trait read one column `on` the data."""
    covariate: str = ''

    def on(self: T, covariate: str) -> T:
        """Use the column named `covariate`."""
        return evolve(self, covariate=covariate)


@attrs(auto_attribs=True, frozen=True, order=False)
class Transformed(Trait):
    """Linear terms with this trait may enter the predictor through a fixed transform of their covariate."""
    TRANSFORMS: ClassVar[Tuple[str, ...]] = ('log',)
    transform: Optional[str] = None

    def with_transform(self: T, transform: Optional[str]) -> T:
        if transform is not None and transform not in self.TRANSFORMS:
            raise ParseError(f'Unknown transform {transform!r}, expected one of {list(self.TRANSFORMS)}')
        return evolve(self, transform=transform)


@attrs(auto_attribs=True, frozen=True, order=False)
class Grouped(Trait):
    """Terms with this trait are built level by level `by` one or more factor columns."""
    factors: Tuple[str, ...] = ()

    def by(self: T, *factors: str) -> T:
        return evolve(self, factors=tuple(factors))

    @property
    def factor(self) -> str:
        return self.factors[0]


@attrs(auto_attribs=True, frozen=True, order=False)
class Basis(Trait):
    """Terms with this trait are expanded on a spline basis of dimension `k`, of kind `bs`.

    `k` counts the columns a single smooth contributes after any identifiability constraint; ``None`` means the
    default."""
    DEFAULT_K: ClassVar[int] = 10
    DEFAULT_BS: ClassVar[str] = TPRS

    k: Optional[int] = None
    bs: Optional[str] = None

    def with_k(self: T, k: int) -> T:
        return evolve(self, k=int(k))

    def with_basis(self: T, bs: str) -> T:
        try:
            return evolve(self, bs=BASIS_CODES[bs])
        except KeyError:
            raise ParseError(f'Unknown basis {bs!r}, expected one of {sorted(BASIS_CODES)}') from None

    @property
    def k_used(self) -> int:
        return self.DEFAULT_K if self.k is None else self.k

    @property
    def basis_kind(self) -> str:
        return self.DEFAULT_BS if self.bs is None else self.bs


__all__ = ['Trait', 'Covariate', 'Transformed', 'Grouped', 'Basis', 'BASIS_CODES']
