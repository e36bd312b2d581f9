"""Recursive-descent parser for the expression grammar.

Grammar (``^`` binds tighter than unary minus, so ``-u1^2`` is ``-(u1^2)``)::

    expr     := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := '-' unary | factor
    factor   := base ('^' exponent)?
    exponent := '-'? base            (must fold to a numeric constant)
    base     := number | var | fn '(' expr ')' | '(' expr ')'
    var      := 't' | 'q'IDX | 'u'IDX | 'p'IDX       (IDX is 1-based)
"""

from __future__ import annotations

import re

from ..errors import ExprSyntaxError, IndexOutOfRange, UnknownVariable
from .core import (FUNCTIONS, Constant, Expr, Kind, Var, VarId, apply, as_expr,
                   evaluate, Env, neg, power, quotient, add, mul, variables)

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
""", re.VERBOSE)

_VAR = re.compile(r"(q|u|p|qdot|udot)(\d+)")
_KINDS = {"q": Kind.STATE, "u": Kind.CONTROL, "p": Kind.COSTATE,
          "qdot": Kind.STATE_DOT, "udot": Kind.CONTROL_DOT}


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, n, m, extra_kinds):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.n = n
        self.m = m
        self.extra = frozenset(extra_kinds)

    @property
    def tok(self):
        return self.tokens[self.i]

    def error(self, msg, cls=ExprSyntaxError, pos=None):
        raise cls(msg, self.tok[2] if pos is None else pos, self.text)

    def accept(self, value):
        if self.tok[0] == "op" and self.tok[1] == value:
            self.i += 1
            return True
        return False

    def expect(self, value):
        if not self.accept(value):
            found = self.tok[1] or "end of input"
            self.error(f"expected {value!r}, found {found!r}")

    def parse(self):
        if self.tok[0] == "end":
            self.error("empty expression")
        e = self.expr()
        if self.tok[0] != "end":
            self.error(f"unexpected token {self.tok[1]!r}")
        return e

    def expr(self):
        terms = [self.term()]
        while True:
            if self.accept("+"):
                terms.append(self.term())
            elif self.accept("-"):
                terms.append(neg(self.term()))
            else:
                return add(*terms) if len(terms) > 1 else terms[0]

    def term(self):
        e = self.unary()
        while True:
            if self.accept("*"):
                e = mul(e, self.unary())
            elif self.accept("/"):
                pos = self.tok[2]
                den = self.unary()
                if isinstance(den, Constant) and den.value == 0:
                    self.error("division by literal zero", pos=pos)
                e = quotient(e, den)
            else:
                return e

    def unary(self):
        if self.accept("-"):
            return neg(self.unary())
        return self.factor()

    def factor(self):
        base = self.base()
        if self.accept("^"):
            pos = self.tok[2]
            negate = self.accept("-")
            ex = self.base()
            if variables(ex):
                self.error("exponent must be a numeric constant", pos=pos)
            try:
                value = evaluate(ex, Env())
            except ArithmeticError as err:
                self.error(f"invalid exponent: {err}", pos=pos)
            return power(base, -value if negate else value)
        return base

    def base(self):
        kind, value, pos = self.tok
        if kind == "number":
            self.i += 1
            return Constant(float(value))
        if kind == "name":
            self.i += 1
            if value in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return apply(value, arg)
            return Var(self.variable(value, pos))
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        found = value or "end of input"
        self.error(f"expected a number, variable, function or '(', found {found!r}")

    def variable(self, name, pos):
        if name == "t":
            return VarId(Kind.TIME)
        m = _VAR.fullmatch(name)
        if m is None or (_KINDS[m.group(1)] not in (Kind.STATE, Kind.CONTROL, Kind.COSTATE)
                         and _KINDS[m.group(1)] not in self.extra):
            raise UnknownVariable(f"unknown identifier {name!r}", pos, self.text)
        kind = _KINDS[m.group(1)]
        idx = int(m.group(2))
        bound = self.m if kind in (Kind.CONTROL, Kind.CONTROL_DOT) else self.n
        if idx < 1 or (bound is not None and idx > bound):
            raise IndexOutOfRange(
                f"{name}: index out of range (valid 1..{bound})", pos, self.text)
        return VarId(kind, idx - 1)


def parse(text: str, n: int = None, m: int = None, *, extra_kinds=()) -> Expr:
    """Parse ``text`` into an Expr.

    ``n`` and ``m`` bound the state/costate and control indices (``None``
    leaves them unchecked). ``extra_kinds`` admits the reserved derivative
    slots, e.g. ``{Kind.CONTROL_DOT}`` for ``udot1`` in lifted forces.
    """
    if not isinstance(text, str):
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            return as_expr(text)
        raise ExprSyntaxError(f"expression must be a string, got {type(text).__name__}")
    return _Parser(text, n, m, extra_kinds).parse()
