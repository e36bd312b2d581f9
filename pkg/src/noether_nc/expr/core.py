"""Expression tree, evaluation environment, printing and compilation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Iterable, Mapping, Sequence, Union

from ..errors import DomainError, UnboundVariable


class Kind(IntEnum):
    TIME = 0
    STATE = 1
    CONTROL = 2
    COSTATE = 3
    STATE_DOT = 4
    # Time derivative of a control. Only used for the third-derivative slot of
    # lifted second-order forces; resolved along trajectories.
    CONTROL_DOT = 5


_PREFIX = {
    Kind.STATE: "q",
    Kind.CONTROL: "u",
    Kind.COSTATE: "p",
    Kind.STATE_DOT: "qdot",
    Kind.CONTROL_DOT: "udot",
}


@dataclass(frozen=True, order=True)
class VarId:
    kind: Kind
    index: int = 0

    def __str__(self):
        if self.kind == Kind.TIME:
            return "t"
        return f"{_PREFIX[self.kind]}{self.index + 1}"


T = VarId(Kind.TIME)


def state(i: int) -> VarId:
    return VarId(Kind.STATE, i)


def control(j: int) -> VarId:
    return VarId(Kind.CONTROL, j)


def costate(i: int) -> VarId:
    return VarId(Kind.COSTATE, i)


def state_dot(i: int) -> VarId:
    return VarId(Kind.STATE_DOT, i)


def control_dot(j: int) -> VarId:
    return VarId(Kind.CONTROL_DOT, j)


# --------------------------------------------------------------------------
# nodes

class Expr:
    """Immutable expression node. Arithmetic operators build new trees."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return quotient(self, as_expr(other))

    def __rtruediv__(self, other):
        return quotient(as_expr(other), self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __neg__(self):
        return neg(self)

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True, repr=False)
class Constant(Expr):
    value: float

    def __repr__(self):
        return f"Constant({self.value!r})"


@dataclass(frozen=True, repr=False)
class Var(Expr):
    var: VarId

    def __repr__(self):
        return f"Var({self.var})"


@dataclass(frozen=True, repr=False)
class Neg(Expr):
    arg: Expr

    def __repr__(self):
        return f"Neg({self.arg!r})"


@dataclass(frozen=True, repr=False)
class Sum(Expr):
    terms: tuple

    def __post_init__(self):
        if len(self.terms) < 2:
            raise ValueError("Sum needs at least two terms")

    def __repr__(self):
        return f"Sum{self.terms!r}"


@dataclass(frozen=True, repr=False)
class Product(Expr):
    factors: tuple

    def __post_init__(self):
        if len(self.factors) < 2:
            raise ValueError("Product needs at least two factors")

    def __repr__(self):
        return f"Product{self.factors!r}"


@dataclass(frozen=True, repr=False)
class Quotient(Expr):
    num: Expr
    den: Expr

    def __post_init__(self):
        if isinstance(self.den, Constant) and self.den.value == 0:
            raise DomainError("division by the literal constant 0")

    def __repr__(self):
        return f"Quotient({self.num!r}, {self.den!r})"


@dataclass(frozen=True, repr=False)
class Power(Expr):
    base: Expr
    exponent: Union[int, float]

    def __repr__(self):
        return f"Power({self.base!r}, {self.exponent!r})"


FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt")


@dataclass(frozen=True, repr=False)
class Apply(Expr):
    fn: str
    arg: Expr

    def __post_init__(self):
        if self.fn not in FUNCTIONS:
            raise ValueError(f"unknown function {self.fn!r}")

    def __repr__(self):
        return f"Apply({self.fn}, {self.arg!r})"


ZERO = Constant(0.0)
ONE = Constant(1.0)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, VarId):
        return Var(x)
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        if not math.isfinite(x):
            raise DomainError(f"non-finite constant {x!r}")
        return Constant(float(x))
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


def _normalize_exponent(e):
    e = float(e)
    if not math.isfinite(e):
        raise DomainError("non-finite exponent")
    return int(e) if e.is_integer() else e


# Light smart constructors: flatten and drop 0/1 identities, nothing more.

def add(*terms) -> Expr:
    flat = []
    for term in terms:
        term = as_expr(term)
        if isinstance(term, Sum):
            flat.extend(term.terms)
        elif isinstance(term, Constant) and term.value == 0:
            continue
        else:
            flat.append(term)
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    return Sum(tuple(flat))


def mul(*factors) -> Expr:
    flat = []
    for factor in factors:
        factor = as_expr(factor)
        if isinstance(factor, Product):
            flat.extend(factor.factors)
        elif isinstance(factor, Constant):
            if factor.value == 0:
                return ZERO
            if factor.value == 1:
                continue
            flat.append(factor)
        else:
            flat.append(factor)
    if not flat:
        return ONE
    if len(flat) == 1:
        return flat[0]
    return Product(tuple(flat))


def neg(x) -> Expr:
    x = as_expr(x)
    if isinstance(x, Constant):
        return Constant(-x.value)
    if isinstance(x, Neg):
        return x.arg
    return Neg(x)


def quotient(num, den) -> Expr:
    num, den = as_expr(num), as_expr(den)
    if isinstance(den, Constant) and den.value == 1:
        return num
    if isinstance(num, Constant) and num.value == 0:
        return ZERO
    return Quotient(num, den)


def power(base, exponent) -> Expr:
    base = as_expr(base)
    exponent = _normalize_exponent(exponent)
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    return Power(base, exponent)


def apply(fn: str, arg) -> Expr:
    return Apply(fn, as_expr(arg))


def sin(x):
    return apply("sin", x)


def cos(x):
    return apply("cos", x)


def exp(x):
    return apply("exp", x)


def ln(x):
    return apply("ln", x)


def sqrt(x):
    return apply("sqrt", x)


# --------------------------------------------------------------------------
# environment and evaluation

def _floats(name, values):
    if values is None:
        return None
    out = tuple(float(v) for v in values)
    for v in out:
        if not math.isfinite(v):
            raise DomainError(f"non-finite entry in {name}")
    return out


@dataclass(frozen=True)
class Env:
    """Point at which expressions are evaluated."""

    t: float = 0.0
    q: tuple = ()
    u: tuple = ()
    p: tuple = ()
    qdot: tuple = None
    udot: tuple = None

    def __post_init__(self):
        t = float(self.t)
        if not math.isfinite(t):
            raise DomainError("non-finite time")
        object.__setattr__(self, "t", t)
        for name in ("q", "u", "p", "qdot", "udot"):
            object.__setattr__(self, name, _floats(name, getattr(self, name)))

    def lookup(self, var: VarId) -> float:
        if var.kind == Kind.TIME:
            return self.t
        vec = (self.q, self.u, self.p, self.qdot, self.udot)[var.kind - 1]
        if vec is None or var.index >= len(vec):
            raise UnboundVariable(str(var))
        return vec[var.index]

    def args(self):
        return (self.t, self.q, self.u, self.p, self.qdot or (), self.udot or ())


def _div(a, b):
    if b == 0:
        raise DomainError("division by zero")
    return a / b


def _pow(b, e):
    if isinstance(e, int):
        if b == 0 and e < 0:
            raise DomainError("zero raised to a negative power")
        try:
            return b ** e
        except OverflowError:
            raise DomainError("overflow in power") from None
    if b <= 0:
        raise DomainError("non-integer power of a non-positive base")
    try:
        return b ** e
    except OverflowError:
        raise DomainError("overflow in power") from None


def _ln(x):
    if x <= 0:
        raise DomainError("ln of a non-positive number")
    return math.log(x)


def _sqrt(x):
    if x < 0:
        raise DomainError("sqrt of a negative number")
    return math.sqrt(x)


def _exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        raise DomainError("overflow in exp") from None


_FN_IMPL = {"sin": math.sin, "cos": math.cos, "exp": _exp, "ln": _ln, "sqrt": _sqrt}


def _eval(e, env):
    if isinstance(e, Constant):
        return e.value
    if isinstance(e, Var):
        return env.lookup(e.var)
    if isinstance(e, Sum):
        terms = e.terms
        acc = _eval(terms[0], env)
        for term in terms[1:]:
            acc = acc + _eval(term, env)
        return acc
    if isinstance(e, Product):
        factors = e.factors
        acc = _eval(factors[0], env)
        for factor in factors[1:]:
            acc = acc * _eval(factor, env)
        return acc
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, Quotient):
        return _div(_eval(e.num, env), _eval(e.den, env))
    if isinstance(e, Power):
        return _pow(_eval(e.base, env), e.exponent)
    if isinstance(e, Apply):
        return _FN_IMPL[e.fn](_eval(e.arg, env))
    raise TypeError(f"not an expression: {e!r}")


def evaluate(e: Expr, env: Env) -> float:
    """Evaluate ``e`` at ``env``; raises DomainError unless the result is a finite real."""
    value = _eval(e, env)
    if not math.isfinite(value):
        raise DomainError(f"non-finite value {value!r}")
    return value


# --------------------------------------------------------------------------
# traversal helpers

def children(e: Expr) -> tuple:
    if isinstance(e, (Sum,)):
        return e.terms
    if isinstance(e, Product):
        return e.factors
    if isinstance(e, (Neg, Apply)):
        return (e.arg,)
    if isinstance(e, Quotient):
        return (e.num, e.den)
    if isinstance(e, Power):
        return (e.base,)
    return ()


def variables(e: Expr) -> frozenset:
    """All VarIds occurring in ``e``."""
    out = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.var)
        else:
            stack.extend(children(node))
    return frozenset(out)


def substitute(e: Expr, mapping: Mapping[VarId, Expr]) -> Expr:
    """Replace variables by expressions (simultaneously)."""
    mapping = {k: as_expr(v) for k, v in mapping.items()}

    def walk(node):
        if isinstance(node, Var):
            return mapping.get(node.var, node)
        if isinstance(node, Constant):
            return node
        if isinstance(node, Sum):
            return add(*(walk(x) for x in node.terms))
        if isinstance(node, Product):
            return mul(*(walk(x) for x in node.factors))
        if isinstance(node, Neg):
            return neg(walk(node.arg))
        if isinstance(node, Quotient):
            return quotient(walk(node.num), walk(node.den))
        if isinstance(node, Power):
            return power(walk(node.base), node.exponent)
        if isinstance(node, Apply):
            return Apply(node.fn, walk(node.arg))
        raise TypeError(node)

    return walk(e)


def additive_terms(e: Expr) -> tuple:
    """Top-level additive terms (used as the magnitude scale in zero tests)."""
    if isinstance(e, Sum):
        return e.terms
    if isinstance(e, Neg):
        return additive_terms(e.arg)
    return (e,)


# --------------------------------------------------------------------------
# printing (output re-parses under the expression grammar)

_PREC_SUM, _PREC_PROD, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _fmt_number(x: float) -> str:
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _fmt_exponent(e) -> str:
    s = _fmt_number(float(e))
    return f"({s})" if float(e) < 0 else s


def _show(e: Expr):
    """Return (text, precedence)."""
    if isinstance(e, Constant):
        s = _fmt_number(e.value)
        return s, (_PREC_UNARY if e.value < 0 else _PREC_ATOM)
    if isinstance(e, Var):
        return str(e.var), _PREC_ATOM
    if isinstance(e, Apply):
        return f"{e.fn}({_show(e.arg)[0]})", _PREC_ATOM
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, _PREC_POW), _PREC_UNARY
    if isinstance(e, Power):
        return f"{_wrap(e.base, _PREC_ATOM)}^{_fmt_exponent(e.exponent)}", _PREC_POW
    if isinstance(e, Product):
        factors = list(e.factors)
        sign = ""
        if isinstance(factors[0], Constant) and factors[0].value == -1:
            sign, factors = "-", factors[1:]
        text = "*".join(_wrap(f, _PREC_UNARY + 1 if i else _PREC_UNARY)
                        for i, f in enumerate(factors))
        if sign:
            return "-" + (text if len(factors) == 1 else f"({text})"), _PREC_UNARY
        return text, _PREC_PROD
    if isinstance(e, Quotient):
        return f"{_wrap(e.num, _PREC_PROD)}/{_wrap(e.den, _PREC_UNARY + 1)}", _PREC_PROD
    if isinstance(e, Sum):
        parts = [_show(e.terms[0])[0]]
        for term in e.terms[1:]:
            if isinstance(term, Neg):
                parts.append(" - " + _wrap(term.arg, _PREC_PROD))
            elif isinstance(term, Constant) and term.value < 0:
                parts.append(" - " + _fmt_number(-term.value))
            elif (isinstance(term, Product) and isinstance(term.factors[0], Constant)
                  and term.factors[0].value < 0):
                flipped = mul(Constant(-term.factors[0].value), *term.factors[1:])
                parts.append(" - " + _wrap(flipped, _PREC_PROD))
            else:
                text, prec = _show(term)
                parts.append(" + " + (f"({text})" if prec < _PREC_PROD or text.startswith("-") else text))
        return "".join(parts), _PREC_SUM
    raise TypeError(e)


def _wrap(e: Expr, min_prec: int) -> str:
    text, prec = _show(e)
    return f"({text})" if prec < min_prec else text


def to_string(e: Expr) -> str:
    return _show(e)[0]


# --------------------------------------------------------------------------
# compilation to Python closures (same operation order as ``evaluate``)

_VEC = {Kind.STATE: "q", Kind.CONTROL: "u", Kind.COSTATE: "p",
        Kind.STATE_DOT: "qd", Kind.CONTROL_DOT: "ud"}


def _code(e: Expr) -> str:
    if isinstance(e, Constant):
        return repr(e.value)
    if isinstance(e, Var):
        if e.var.kind == Kind.TIME:
            return "t"
        return f"{_VEC[e.var.kind]}[{e.var.index}]"
    if isinstance(e, Sum):
        return "(" + " + ".join(_code(x) for x in e.terms) + ")"
    if isinstance(e, Product):
        return "(" + " * ".join(_code(x) for x in e.factors) + ")"
    if isinstance(e, Neg):
        return f"(-{_code(e.arg)})"
    if isinstance(e, Quotient):
        return f"_div({_code(e.num)}, {_code(e.den)})"
    if isinstance(e, Power):
        return f"_pow({_code(e.base)}, {e.exponent!r})"
    if isinstance(e, Apply):
        return f"_{e.fn}({_code(e.arg)})"
    raise TypeError(e)


_NAMESPACE = {"_div": _div, "_pow": _pow, "_sin": math.sin, "_cos": math.cos,
              "_exp": _exp, "_ln": _ln, "_sqrt": _sqrt}


def compile_exprs(exprs: Sequence[Expr]) -> Callable:
    """Compile expressions into ``f(t, q, u, p, qd=(), ud=()) -> tuple``.

    Inputs must be Python floats (or sequences of them) for results to be
    bit-identical with :func:`evaluate`.
    """
    exprs = list(exprs)
    if not exprs:
        return lambda t, q, u, p, qd=(), ud=(): ()
    body = ", ".join(_code(as_expr(e)) for e in exprs)
    src = f"def _f(t, q, u, p, qd=(), ud=()):\n    return ({body},)\n"
    namespace = dict(_NAMESPACE)
    exec(compile(src, "<noether_nc.expr>", "exec"), namespace)
    return namespace["_f"]


def compile_expr(e: Expr) -> Callable:
    """Compile a single expression into ``f(t, q, u, p, qd=(), ud=()) -> float``."""
    src = f"def _f(t, q, u, p, qd=(), ud=()):\n    return {_code(as_expr(e))}\n"
    namespace = dict(_NAMESPACE)
    exec(compile(src, "<noether_nc.expr>", "exec"), namespace)
    return namespace["_f"]


def free_of(e: Expr, kinds: Iterable[Kind]) -> bool:
    kinds = set(kinds)
    return not any(v.kind in kinds for v in variables(e))
