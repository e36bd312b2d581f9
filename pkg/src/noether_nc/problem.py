"""Optimal-control problem model, Hamiltonian, symmetry generators, lifting.

A problem is ``min int_a^b L(t, q, u) dt`` subject to ``qdot = phi(t, q, u)``,
with an additional nonconservative force ``Q(t, q, u)`` entering the costate
equation slot by slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

from .expr import (ZERO, Env, Expr, Kind, T, Var, add, as_expr, control, costate, diff,
                   evaluate, free_of, mul, neg, parse, simplify, state, to_string,
                   variables)

_PROBLEM_FORBIDDEN = (Kind.COSTATE, Kind.STATE_DOT)


def _check_indices(e: Expr, n: int, m: int, what: str):
    for v in variables(e):
        bound = m if v.kind in (Kind.CONTROL, Kind.CONTROL_DOT) else n
        if v.kind != Kind.TIME and v.index >= bound:
            raise ValueError(f"{what}: variable {v} out of range (n={n}, m={m})")


def _as_tuple(exprs, n, what, parser_n, parser_m, extra=()):
    out = []
    for e in exprs:
        if isinstance(e, str):
            e = parse(e, parser_n, parser_m, extra_kinds=extra)
        out.append(as_expr(e))
    if len(out) != n:
        raise ValueError(f"{what} must have {n} components, got {len(out)}")
    return tuple(out)


@dataclass(frozen=True, eq=False)
class OCProblem:
    """Problem data; expressions may be given as strings in the expression grammar."""

    n: int
    m: int
    L: Expr
    phi: tuple
    Q: tuple = None
    interval: tuple = (0.0, 1.0)
    labels: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        n, m = self.n, self.m
        if n < 1 or m < 0:
            raise ValueError("need n >= 1 and m >= 0")
        L = parse(self.L, n, m) if isinstance(self.L, str) else as_expr(self.L)
        phi = _as_tuple(self.phi, n, "phi", n, m)
        Q = self.Q if self.Q is not None else (ZERO,) * n
        Q = _as_tuple(Q, n, "Q", n, m, extra=(Kind.CONTROL_DOT,))
        a, b = (float(x) for x in self.interval)
        if not a < b:
            raise ValueError(f"interval must satisfy a < b, got [{a}, {b}]")
        for what, e in [("L", L), *((f"phi[{i}]", x) for i, x in enumerate(phi)),
                        *((f"Q[{i}]", x) for i, x in enumerate(Q))]:
            if not free_of(e, _PROBLEM_FORBIDDEN):
                raise ValueError(f"{what} must not contain costate or state-rate variables")
            _check_indices(e, n, m, what)
        for x in (L, *phi):
            if not free_of(x, (Kind.CONTROL_DOT,)):
                raise ValueError("control-rate slots may only appear in the force")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "interval", (a, b))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    # equality by content (cached derivatives don't participate)
    def _key(self):
        return (self.n, self.m, self.L, self.phi, self.Q, self.interval)

    def __eq__(self, other):
        return isinstance(other, OCProblem) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    @cached_property
    def H(self) -> Expr:
        return hamiltonian(self)

    @cached_property
    def H_t(self):
        return diff(self.H, T)

    @cached_property
    def H_q(self):
        return tuple(diff(self.H, state(i)) for i in range(self.n))

    @cached_property
    def H_u(self):
        return tuple(diff(self.H, control(j)) for j in range(self.m))

    @cached_property
    def H_p(self):
        return tuple(diff(self.H, costate(i)) for i in range(self.n))

    @cached_property
    def H_uu(self):
        return tuple(tuple(diff(self.H_u[j], control(k)) for k in range(self.m))
                     for j in range(self.m))

    @property
    def is_conservative(self) -> bool:
        return all(simplify(x) == ZERO for x in self.Q)

    @property
    def uses_control_rate(self) -> bool:
        return any(not free_of(x, (Kind.CONTROL_DOT,)) for x in self.Q)


def hamiltonian(prob: OCProblem) -> Expr:
    """``H = -L + sum_i p_i phi_i``, simplified."""
    terms = [neg(prob.L)]
    terms += [mul(costate(i), prob.phi[i]) for i in range(prob.n)]
    return simplify(add(*terms))


def _parse_gen(e, n, m):
    return parse(e, n, m) if isinstance(e, str) else as_expr(e)


@dataclass(frozen=True)
class Generators:
    """Infinitesimal generators (tau, xi, sigma, alpha) and gauge term Lambda.

    ``tau``, ``xi`` and ``gauge`` depend on (t, q) only; ``sigma`` and
    ``alpha`` may depend on (t, q, u, p).
    """

    tau: Expr
    xi: tuple
    sigma: tuple
    alpha: tuple
    gauge: Expr = ZERO

    def __post_init__(self):
        n, m = len(self.xi), len(self.sigma)
        conv = lambda e: _parse_gen(e, n, m)  # noqa: E731
        object.__setattr__(self, "tau", conv(self.tau))
        object.__setattr__(self, "xi", tuple(conv(x) for x in self.xi))
        object.__setattr__(self, "sigma", tuple(conv(x) for x in self.sigma))
        object.__setattr__(self, "alpha", tuple(conv(x) for x in self.alpha))
        object.__setattr__(self, "gauge", conv(self.gauge))
        if len(self.alpha) != n:
            raise ValueError("alpha and xi must have the same length")
        tq_only = (Kind.CONTROL, Kind.COSTATE, Kind.STATE_DOT, Kind.CONTROL_DOT)
        for what, e in [("tau", self.tau), ("gauge", self.gauge),
                        *((f"xi[{i}]", x) for i, x in enumerate(self.xi))]:
            if not free_of(e, tq_only):
                raise ValueError(f"{what} may depend on t and q only")
        for what, e in [*((f"sigma[{j}]", x) for j, x in enumerate(self.sigma)),
                        *((f"alpha[{i}]", x) for i, x in enumerate(self.alpha))]:
            if not free_of(e, (Kind.STATE_DOT, Kind.CONTROL_DOT)):
                raise ValueError(f"{what} must not contain derivative slots")

    @property
    def n(self):
        return len(self.xi)

    @property
    def m(self):
        return len(self.sigma)

    @classmethod
    def zero(cls, n: int, m: int) -> "Generators":
        return cls(ZERO, (ZERO,) * n, (ZERO,) * m, (ZERO,) * n, ZERO)

    @classmethod
    def time_translation(cls, n: int, m: int) -> "Generators":
        return cls(as_expr(1.0), (ZERO,) * n, (ZERO,) * m, (ZERO,) * n, ZERO)

    def components(self) -> tuple:
        return (self.tau, *self.xi, *self.sigma, *self.alpha, self.gauge)

    def check_dims(self, prob: OCProblem):
        if self.n != prob.n or self.m != prob.m:
            raise ValueError(
                f"generators sized (n={self.n}, m={self.m}) for a problem with "
                f"n={prob.n}, m={prob.m}")
        for e in self.components():
            _check_indices(e, prob.n, prob.m, "generator")

    def _map(self, fn, other=None):
        if other is None:
            parts = [fn(c) for c in self.components()]
        else:
            if (other.n, other.m) != (self.n, self.m):
                raise ValueError("generator dimensions differ")
            parts = [fn(a, b) for a, b in zip(self.components(), other.components())]
        n, m = self.n, self.m
        return Generators(parts[0], tuple(parts[1:1 + n]), tuple(parts[1 + n:1 + n + m]),
                          tuple(parts[1 + n + m:1 + 2 * n + m]), parts[-1])

    def __add__(self, other):
        return self._map(lambda a, b: simplify(add(a, b)), other)

    def scale(self, c: float) -> "Generators":
        return self._map(lambda a: simplify(mul(as_expr(float(c)), a)))

    def simplified(self) -> "Generators":
        return self._map(simplify)

    def with_gauge(self, gauge) -> "Generators":
        return Generators(self.tau, self.xi, self.sigma, self.alpha,
                          _parse_gen(gauge, self.n, self.m))

    def to_strings(self) -> dict:
        return {"tau": to_string(self.tau), "xi": [to_string(x) for x in self.xi],
                "sigma": [to_string(x) for x in self.sigma],
                "alpha": [to_string(x) for x in self.alpha],
                "gauge": to_string(self.gauge)}


FIRST_ORDER_CV = "FirstOrderCV"
SECOND_ORDER_CV = "SecondOrderCV"


@dataclass(frozen=True, eq=False)
class LiftedProblem:
    """A calculus-of-variations problem rewritten in optimal-control form."""

    kind: str
    lagrangian: Expr
    force: tuple
    problem: OCProblem
    coordinates: dict = field(default_factory=dict)

    @property
    def dof(self) -> int:
        return self.problem.m if self.kind == FIRST_ORDER_CV else 1

    def lagrangian_at(self, t, q, qdot, qddot=None) -> float:
        """Evaluate L at original-coordinate jet values."""
        q, qdot = list(q), list(qdot)
        if self.kind == FIRST_ORDER_CV:
            return evaluate(self.lagrangian, Env(t=t, q=q, u=qdot))
        if qddot is None:
            raise ValueError("second-order Lagrangian needs qddot")
        return evaluate(self.lagrangian, Env(t=t, q=[q[0], qdot[0]], u=list(qddot)))


def lift_cv1(L, Q: Sequence, interval, *, name: str = "") -> LiftedProblem:
    """First-order problem ``int L(t, q, qdot)``: controls stand for velocities."""
    d = len(Q)
    if d < 1:
        raise ValueError("need at least one degree of freedom")
    if isinstance(L, str):
        L = parse(L, d, d)
    forces = tuple(parse(x, d, d) if isinstance(x, str) else as_expr(x) for x in Q)
    for e in (L, *forces):
        _check_indices(e, d, d, "lift_cv1")
        if not free_of(e, (Kind.COSTATE, Kind.STATE_DOT, Kind.CONTROL_DOT)):
            raise ValueError("lift_cv1: L and Q may use t, q and u (for qdot) only")
    prob = OCProblem(n=d, m=d, L=L, phi=tuple(Var(control(i)) for i in range(d)),
                     Q=forces, interval=interval, name=name)
    coords = {f"q{i + 1}": f"q{i + 1}" for i in range(d)}
    coords.update({f"u{i + 1}": f"qdot{i + 1}" for i in range(d)})
    return LiftedProblem(FIRST_ORDER_CV, L, forces, prob, coords)


def lift_cv2(L, Q, interval, *, name: str = "") -> LiftedProblem:
    """Second-order one-dof problem ``int L(t, q, qdot, qddot)``.

    Lifted variables: ``q1 = q``, ``q2 = qdot``, ``u1 = qddot``; the force may
    use ``udot1`` for the third derivative of q.
    """
    if isinstance(Q, (str, Expr)):
        Q = [Q]
    Q = list(Q)
    if len(Q) != 1:
        raise ValueError(f"second-order lifting supports one degree of freedom, got {len(Q)}")
    if isinstance(L, str):
        L = parse(L, 2, 1)
    force = parse(Q[0], 2, 1, extra_kinds=(Kind.CONTROL_DOT,)) if isinstance(Q[0], str) \
        else as_expr(Q[0])
    for e in (L, force):
        _check_indices(e, 2, 1, "lift_cv2")
        if not free_of(e, (Kind.COSTATE, Kind.STATE_DOT)):
            raise ValueError("lift_cv2: L and Q may not use costates")
    if not free_of(L, (Kind.CONTROL_DOT,)):
        raise ValueError("lift_cv2: L may not use the third-derivative slot")
    prob = OCProblem(n=2, m=1, L=L, phi=(Var(state(1)), Var(control(0))),
                     Q=(force, ZERO), interval=interval, name=name)
    coords = {"q1": "q", "q2": "qdot", "u1": "qddot", "udot1": "qdddot"}
    return LiftedProblem(SECOND_ORDER_CV, L, (force,), prob, coords)


__all__ = ["OCProblem", "Generators", "LiftedProblem", "hamiltonian", "lift_cv1",
           "lift_cv2", "FIRST_ORDER_CV", "SECOND_ORDER_CV"]
