"""Recursive-descent parser for STL formulas.

Precedence from loosest to tightest: ``U[a,b]`` (left associative), ``|``,
``&``, the prefix operators ``!``, ``F[a,b]``, ``G[a,b]``, then atoms and
parentheses.  Atoms compare arithmetic expressions over species names,
numeric literals, ``+ - *`` and ``D(X)``.
"""

from __future__ import annotations

import math
import re

from .ast import (
    And, Atom, BinOp, Diff, Formula, Neg, Not, Num, Or, TrueF, Until, Var, always, eventually, false,
)

COMPARISONS = ("<=", ">=", "==", "<", ">")


class StlSyntaxError(ValueError):
    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(f"{message} at position {position}")


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|==|&&|\|\||[<>=!&|()\[\],+\-*])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise StlSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            value = m.group()
            if value == "&&":
                value = "&"
            elif value == "||":
                value = "|"
            elif value == "=":
                value = "=="
            tokens.append((kind, value, pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    # -- token helpers ------------------------------------------------------
    @property
    def tok(self):
        return self.tokens[self.i]

    def peek(self, offset=1):
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def error(self, message, tok=None):
        tok = tok or self.tok
        found = "end of input" if tok[0] == "end" else repr(tok[1])
        return StlSyntaxError(f"{message}, found {found}", tok[2], self.text)

    def accept(self, value):
        if self.tok[1] == value and self.tok[0] in ("op", "ident"):
            self.i += 1
            return True
        return False

    def expect(self, value):
        if not self.accept(value):
            raise self.error(f"expected {value!r}")

    def is_temporal(self, name):
        return self.tok == ("ident", name, self.tok[2]) and self.peek()[1] == "["

    # -- formulas -------------------------------------------------------------
    def formula(self) -> Formula:
        left = self.disjunction()
        while self.is_temporal("U"):
            self.i += 1
            lo, hi = self.interval()
            right = self.disjunction()
            left = Until(left, right, lo, hi)
        return left

    def disjunction(self) -> Formula:
        left = self.conjunction()
        while self.accept("|"):
            left = Or(left, self.conjunction())
        return left

    def conjunction(self) -> Formula:
        left = self.unary()
        while self.accept("&"):
            left = And(left, self.unary())
        return left

    def unary(self) -> Formula:
        if self.accept("!"):
            return Not(self.unary())
        for name, build in (("F", eventually), ("G", always)):
            if self.is_temporal(name):
                self.i += 1
                lo, hi = self.interval()
                return build(self.unary(), lo, hi)
        return self.primary()

    def primary(self) -> Formula:
        kind, value, _ = self.tok
        if kind == "ident" and value == "true" and not self._starts_comparison(1):
            self.i += 1
            return TrueF()
        if kind == "ident" and value == "false" and not self._starts_comparison(1):
            self.i += 1
            return false()
        if kind == "end":
            raise self.error("expected a formula")
        if value == "(":
            # either a parenthesised formula or an atom whose left side starts with '('
            start = self.i
            try:
                return self.atom()
            except StlSyntaxError as atom_err:
                self.i = start + 1
                try:
                    inner = self.formula()
                    self.expect(")")
                    return inner
                except StlSyntaxError as formula_err:
                    raise max(atom_err, formula_err, key=lambda e: e.position) from None
        return self.atom()

    def _starts_comparison(self, offset):
        nxt = self.peek(offset)
        return nxt[0] == "op" and nxt[1] in COMPARISONS + ("+", "-", "*")

    def atom(self) -> Atom:
        left = self.expr()
        kind, op, _ = self.tok
        if kind != "op" or op not in COMPARISONS:
            raise self.error("expected a comparison operator")
        self.i += 1
        right = self.expr()
        return Atom(op, left, right)

    def interval(self) -> tuple[float, float]:
        start = self.tok
        self.expect("[")
        lo = self.number()
        self.expect(",")
        if self.tok[0] == "ident" and self.tok[1] in ("inf", "oo"):
            self.i += 1
            hi = math.inf
        else:
            hi = self.number()
        self.expect("]")
        if not 0 <= lo < hi:
            raise StlSyntaxError(f"invalid interval [{lo}, {hi}]", start[2], self.text)
        return lo, hi

    def number(self) -> float:
        if self.tok[0] != "num":
            raise self.error("expected a number")
        value = float(self.tok[1])
        self.i += 1
        return value

    # -- arithmetic -----------------------------------------------------------
    def expr(self):
        left = self.term()
        while self.tok[0] == "op" and self.tok[1] in ("+", "-"):
            op = self.tok[1]
            self.i += 1
            left = BinOp(op, left, self.term())
        return left

    def term(self):
        left = self.factor()
        while self.accept("*"):
            left = BinOp("*", left, self.factor())
        return left

    def factor(self):
        kind, value, _ = self.tok
        if kind == "op" and value == "-":
            self.i += 1
            return Neg(self.factor())
        if kind == "num":
            self.i += 1
            return Num(float(value))
        if kind == "ident":
            if value == "D" and self.peek()[1] == "(":
                self.i += 2
                if self.tok[0] != "ident":
                    raise self.error("expected a species name")
                name = self.tok[1]
                self.i += 1
                self.expect(")")
                return Diff(name)
            if value in ("true", "false") or (value in ("F", "G", "U") and self.peek()[1] == "["):
                raise self.error("expected an arithmetic expression")
            self.i += 1
            return Var(value)
        if self.accept("("):
            inner = self.expr()
            self.expect(")")
            return inner
        raise self.error("expected an arithmetic expression")


def parse_stl(text: str) -> Formula:
    """Parse formula text into a desugared :mod:`smmc.stl.ast` tree."""
    parser = _Parser(text)
    phi = parser.formula()
    if parser.tok[0] != "end":
        raise parser.error("unexpected trailing input")
    return phi
