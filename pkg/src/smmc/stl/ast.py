"""STL abstract syntax.

Only the core connectives are represented (true, atoms, not, and, until);
``F``, ``G``, ``|`` and ``false`` are rewritten into them by the parser.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union


# -- arithmetic expressions inside atoms ------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Diff:
    """One-step difference of a species, written ``D(X)``."""

    name: str


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - *
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


Expr = Union[Num, Var, Diff, BinOp, Neg]


# -- formulas ---------------------------------------------------------------

@dataclass(frozen=True)
class TrueF:
    pass


@dataclass(frozen=True)
class Atom:
    op: str  # one of < <= > >= ==
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Until:
    left: "Formula"
    right: "Formula"
    lo: float
    hi: float  # math.inf for an unbounded interval

    def __post_init__(self):
        if not (0 <= self.lo < self.hi):
            raise ValueError(f"bad temporal interval [{self.lo}, {self.hi}]")


Formula = Union[TrueF, Atom, Not, And, Until]


def false() -> Formula:
    return Not(TrueF())


def Or(a: Formula, b: Formula) -> Formula:  # noqa: N802 - mirrors the node constructors
    return Not(And(Not(a), Not(b)))


def eventually(arg: Formula, lo: float, hi: float) -> Formula:
    return Until(TrueF(), arg, lo, hi)


def always(arg: Formula, lo: float, hi: float) -> Formula:
    return Not(eventually(Not(arg), lo, hi))


def temporal_depth(phi: Formula) -> float:
    """Length of the time window needed to decide ``phi`` at time 0.

    Unbounded intervals ``[a, inf)`` contribute ``a``: their upper end is
    clipped to the signal horizon.
    """
    if isinstance(phi, (TrueF, Atom)):
        return 0.0
    if isinstance(phi, Not):
        return temporal_depth(phi.arg)
    if isinstance(phi, And):
        return max(temporal_depth(phi.left), temporal_depth(phi.right))
    reach = phi.lo if math.isinf(phi.hi) else phi.hi
    return reach + max(temporal_depth(phi.left), temporal_depth(phi.right))


def identifiers(node) -> set[str]:
    """Species names referenced anywhere in a formula or expression."""
    if isinstance(node, (Var, Diff)):
        return {node.name}
    if isinstance(node, (Num, TrueF)):
        return set()
    if isinstance(node, (Not, Neg)):
        return identifiers(node.arg)
    return identifiers(node.left) | identifiers(node.right)


def _num(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return repr(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


def format_expr(e: Expr) -> str:
    if isinstance(e, Num):
        return _num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Diff):
        return f"D({e.name})"
    if isinstance(e, Neg):
        return f"-({format_expr(e.arg)})"
    return f"({format_expr(e.left)} {e.op} {format_expr(e.right)})"


def format_formula(phi: Formula) -> str:
    """Fully parenthesised text that parses back to the same tree."""
    if isinstance(phi, TrueF):
        return "true"
    if isinstance(phi, Atom):
        return f"({format_expr(phi.left)} {phi.op} {format_expr(phi.right)})"
    if isinstance(phi, Not):
        return f"!{format_formula(phi.arg)}"
    if isinstance(phi, And):
        return f"({format_formula(phi.left)} & {format_formula(phi.right)})"
    return f"({format_formula(phi.left)} U[{_num(phi.lo)},{_num(phi.hi)}] {format_formula(phi.right)})"
