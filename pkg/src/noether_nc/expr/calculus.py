"""Symbolic partial derivatives and light simplification.

``simplify`` brings an expression into a canonical sum of monomials over
*atoms* (variables, function applications, and non-monomial denominators or
non-integer powers, each simplified recursively). Products are distributed
over sums, identical factors merge into powers and identical monomials merge
their coefficients. This is enough for Noether residuals of polynomial and
rational generators to collapse to 0; it is not a CAS.
"""

from __future__ import annotations

from ..errors import DomainError
from .core import (ONE, ZERO, Apply, Constant, Env, Expr, Neg, Power, Product,
                   Quotient, Sum, Var, VarId, add, apply, as_expr, cos, evaluate,
                   mul, neg, power, quotient, sin, sqrt, to_string)

# Expansion of products/powers stops (the factor is kept as an atom) beyond this.
MAX_TERMS = 4096
MAX_EXPAND_POWER = 8


def diff(e: Expr, v: VarId, *, simplified: bool = True) -> Expr:
    """Partial derivative of ``e`` with respect to ``v``."""
    d = _diff(as_expr(e), v)
    return simplify(d) if simplified else d


def _diff(e, v):
    if isinstance(e, Constant):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.var == v else ZERO
    if isinstance(e, Neg):
        return neg(_diff(e.arg, v))
    if isinstance(e, Sum):
        return add(*(_diff(x, v) for x in e.terms))
    if isinstance(e, Product):
        terms = []
        fs = e.factors
        for i, f in enumerate(fs):
            df = _diff(f, v)
            if isinstance(df, Constant) and df.value == 0:
                continue
            terms.append(mul(*fs[:i], df, *fs[i + 1:]))
        return add(*terms)
    if isinstance(e, Quotient):
        da, db = _diff(e.num, v), _diff(e.den, v)
        top = add(mul(da, e.den), neg(mul(e.num, db)))
        if isinstance(top, Constant) and top.value == 0:
            return ZERO
        return quotient(top, power(e.den, 2))
    if isinstance(e, Power):
        db = _diff(e.base, v)
        if isinstance(db, Constant) and db.value == 0:
            return ZERO
        return mul(Constant(float(e.exponent)), power(e.base, e.exponent - 1), db)
    if isinstance(e, Apply):
        da = _diff(e.arg, v)
        if isinstance(da, Constant) and da.value == 0:
            return ZERO
        if e.fn == "sin":
            outer = cos(e.arg)
        elif e.fn == "cos":
            outer = neg(sin(e.arg))
        elif e.fn == "exp":
            outer = e
        elif e.fn == "ln":
            return quotient(da, e.arg)
        elif e.fn == "sqrt":
            return quotient(da, mul(Constant(2.0), sqrt(e.arg)))
        else:  # pragma: no cover
            raise ValueError(e.fn)
        return mul(outer, da)
    raise TypeError(e)


# --------------------------------------------------------------------------
# polynomial normal form
#
# A polynomial is a dict {monomial: coefficient}; a monomial is a sorted tuple
# of (atom_key, exponent) pairs; atom_key is the printed canonical atom, with
# the atom Expr itself kept in a side table.

class _Normalizer:
    def __init__(self):
        self.atoms = {}

    def atom(self, e: Expr, exponent=1):
        key = to_string(e)
        self.atoms.setdefault(key, e)
        return {((key, exponent),): 1.0}

    def const(self, c):
        return {(): float(c)} if c != 0 else {}

    def add(self, a, b, scale=1.0):
        out = dict(a)
        for mono, c in b.items():
            val = out.get(mono, 0.0) + scale * c
            if val == 0:
                out.pop(mono, None)
            else:
                out[mono] = val
        return out

    @staticmethod
    def _mono_mul(m1, m2):
        exps = dict(m1)
        for key, ex in m2:
            val = exps.get(key, 0) + ex
            if isinstance(val, float) and val.is_integer():
                val = int(val)
            if val == 0:
                exps.pop(key, None)
            else:
                exps[key] = val
        return tuple(sorted(exps.items()))

    def mul(self, a, b):
        out = {}
        for m1, c1 in a.items():
            for m2, c2 in b.items():
                mono = self._mono_mul(m1, m2)
                val = out.get(mono, 0.0) + c1 * c2
                if val == 0:
                    out.pop(mono, None)
                else:
                    out[mono] = val
        return out

    def mono_power(self, poly, k):
        ((mono, c),) = poly.items()
        if c == 0:
            return {}
        m = []
        for key, ex in mono:
            val = ex * k
            if isinstance(val, float) and val.is_integer():
                val = int(val)
            m.append((key, val))
        return {tuple(sorted(m)): _pow_or_domain(c, k)}

    def to_poly(self, e: Expr):
        if isinstance(e, Constant):
            return self.const(e.value)
        if isinstance(e, Var):
            return self.atom(e)
        if isinstance(e, Neg):
            return {m: -c for m, c in self.to_poly(e.arg).items()}
        if isinstance(e, Sum):
            out = {}
            for term in e.terms:
                out = self.add(out, self.to_poly(term))
            return out
        if isinstance(e, Product):
            out = {(): 1.0}
            for f in e.factors:
                pf = self.to_poly(f)
                if len(out) * len(pf) > MAX_TERMS:
                    pf = self.atom(self.from_poly(pf))
                out = self.mul(out, pf)
                if not out:
                    return {}
            return out
        if isinstance(e, Quotient):
            num = self.to_poly(e.num)
            if not num:
                return {}
            den = self.to_poly(e.den)
            if not den:
                raise DomainError("division by an expression that simplifies to 0")
            if len(den) == 1:
                return self.mul(num, self.mono_power(den, -1))
            return self.mul(num, self.atom(self.from_poly(den), -1))
        if isinstance(e, Power):
            k = e.exponent
            base = self.to_poly(e.base)
            if not base:
                if isinstance(k, int) and k > 0:
                    return {}
                raise DomainError("power of zero with non-positive or non-integer exponent")
            if len(base) == 1 and (isinstance(k, int) or self._positive_mono(base)):
                return self.mono_power(base, k)
            if isinstance(k, int) and 0 < k <= MAX_EXPAND_POWER and len(base) ** k <= MAX_TERMS:
                out = base
                for _ in range(k - 1):
                    out = self.mul(out, base)
                return out
            return self.atom(self.from_poly(base), k)
        if isinstance(e, Apply):
            arg = self.from_poly(self.to_poly(e.arg))
            if isinstance(arg, Constant):
                try:
                    return self.const(evaluate(apply(e.fn, arg), Env()))
                except DomainError:
                    pass
            return self.atom(apply(e.fn, arg))
        raise TypeError(e)

    @staticmethod
    def _positive_mono(poly):
        # c or c * x^1 with c > 0: (c x)^k == c^k x^k whenever the original is defined.
        ((mono, c),) = poly.items()
        return c > 0 and (not mono or (len(mono) == 1 and mono[0][1] == 1))

    def from_poly(self, poly) -> Expr:
        if not poly:
            return ZERO
        terms = []
        for mono in sorted(poly, key=_mono_order):
            c = poly[mono]
            factors = [power(self.atoms[key], ex) for key, ex in mono]
            if not factors:
                terms.append(Constant(c))
            elif c == 1:
                terms.append(mul(*factors))
            elif c == -1:
                terms.append(neg(mul(*factors)))
            else:
                terms.append(mul(Constant(c), *factors))
        return add(*terms)


def _mono_order(mono):
    degree = sum(ex for _, ex in mono)
    return (degree, mono)


def _pow_or_domain(c, k):
    try:
        return float(c) ** k
    except (ZeroDivisionError, OverflowError):
        raise DomainError("invalid constant power") from None


def simplify(e: Expr) -> Expr:
    """Canonical sum-of-monomials form; eval-equivalent wherever ``e`` is defined."""
    norm = _Normalizer()
    out = norm.from_poly(norm.to_poly(as_expr(e)))
    return out


def expand_constant(e: Expr):
    """Return the float value if ``e`` simplifies to a constant, else None."""
    s = simplify(e)
    return s.value if isinstance(s, Constant) else None


def is_identically_zero(e: Expr) -> bool:
    """Structural check: ``simplify(e)`` is the literal 0."""
    s = simplify(e)
    return isinstance(s, Constant) and s.value == 0
