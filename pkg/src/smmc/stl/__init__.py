"""Signal temporal logic: parsing and Boolean monitoring."""

from .ast import (
    And, Atom, Formula, Not, Or, TrueF, Until, always, eventually, false, format_formula, temporal_depth,
)
from .monitor import (
    HorizonError, UnboundIdentifierError, atom_signal, check_formula, monitor, satisfaction_signal,
)
from .parser import StlSyntaxError, parse_stl
from .signals import BoolSignal

__all__ = [
    "And", "Atom", "BoolSignal", "Formula", "HorizonError", "Not", "Or", "StlSyntaxError", "TrueF",
    "UnboundIdentifierError", "Until", "always", "atom_signal", "check_formula", "eventually", "false",
    "format_formula", "monitor", "parse_stl", "satisfaction_signal", "temporal_depth",
]
