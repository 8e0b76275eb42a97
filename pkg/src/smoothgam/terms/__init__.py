"""Model terms. Prototype instances in :mod:`.instances` are refined with fluent builders, e.g.
``Smooth.on('day').with_k(9)`` or ``RandomSmooth.on('day').by('egg').with_k(6)``."""
from . import classes, instances, traits
from .classes import FittedTerm, PenaltyBlock, Term
from .instances import *

__all__ = ['classes', 'instances', 'traits', 'FittedTerm', 'PenaltyBlock', 'Term'] + instances.__all__
