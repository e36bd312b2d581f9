"""Nonconservative constants of motion and their drift along trajectories.

Four forms are supported::

    OptimalControl  C = H tau - p.xi + f - Lambda
    Conservative    C = H tau - p.xi - Lambda            (no path term)
    FirstOrderCV    C = tau (L - u.L_u) + L_u.xi - f + Lambda
    SecondOrderCV   C = L tau + (L_q2 - D L_u)(xi0 - q2 tau) + L_u (xi1 - u tau) - f + Lambda

``f`` is the path integral of ``Q . (xi - tau qdot)`` carried by the
trajectory. The two CV forms are, as printed, the negatives of the
optimal-control form on lifted problems; :func:`equivalence_check` measures that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .dynamics import Trajectory
from .errors import FormMismatch, MissingDerivativeCache, NotASymmetry
from .expr import (Expr, Kind, T, Var, add, control, control_dot, costate, diff, free_of,
                   mul, neg, simplify, state, to_string)
from .problem import FIRST_ORDER_CV, SECOND_ORDER_CV, Generators, LiftedProblem, OCProblem
from .symmetry import InvarianceVerdict, check_invariance

OPTIMAL_CONTROL = "OptimalControl"
CONSERVATIVE = "Conservative"
FORMS = (OPTIMAL_CONTROL, CONSERVATIVE, FIRST_ORDER_CV, SECOND_ORDER_CV)

DRIFT_TOL = 1e-6
ORDER_MIN = 3.5
# Drift this small (relative to 1 + |C|) is indistinguishable from round-off
# accumulated over a few thousand steps; no convergence order can be read off it.
ROUNDOFF_FLOOR = 1e-12


@dataclass(frozen=True)
class MotionConstant:
    form: str
    generators: Generators
    symbolic: Expr          # C without its path term
    f_sign: int             # +1, -1, or 0 when the form carries no path term
    problem: OCProblem
    f_index: Optional[int] = None
    verified: bool = True
    verdict: Optional[InvarianceVerdict] = None

    @property
    def needs_rates(self) -> bool:
        return not free_of(self.symbolic, (Kind.CONTROL_DOT,))

    def describe(self) -> str:
        text = to_string(self.symbolic)
        if self.f_sign > 0:
            text += " + f"
        elif self.f_sign < 0:
            text += " - f"
        return text


def _target(target):
    if isinstance(target, LiftedProblem):
        return target.problem, target
    return target, None


def _cv1_part(lifted: LiftedProblem, gen: Generators) -> Expr:
    L, d = lifted.lagrangian, lifted.dof
    Lu = [diff(L, control(i)) for i in range(d)]
    u_Lu = add(*[mul(Var(control(i)), Lu[i]) for i in range(d)])
    return add(mul(gen.tau, add(L, neg(u_Lu))),
               *[mul(Lu[i], gen.xi[i]) for i in range(d)], gen.gauge)


def _cv2_part(lifted: LiftedProblem, gen: Generators) -> Expr:
    L = lifted.lagrangian
    q2, u, udot = Var(state(1)), Var(control(0)), Var(control_dot(0))
    Lu = diff(L, control(0))
    Lq2 = diff(L, state(1))
    # total derivative in the lifted jet: q1' = q2, q2' = u1, u1' = udot1
    DLu = add(diff(Lu, T), mul(diff(Lu, state(0)), q2), mul(diff(Lu, state(1)), u),
              mul(diff(Lu, control(0)), udot))
    return add(mul(L, gen.tau),
               mul(add(Lq2, neg(DLu)), add(gen.xi[0], neg(mul(q2, gen.tau)))),
               mul(Lu, add(gen.xi[1], neg(mul(u, gen.tau)))), gen.gauge)


def symbolic_part(target, gen: Generators, form: str) -> Expr:
    prob, lifted = _target(target)
    if form in (OPTIMAL_CONTROL, CONSERVATIVE):
        e = add(mul(prob.H, gen.tau),
                *[neg(mul(Var(costate(i)), gen.xi[i])) for i in range(prob.n)],
                neg(gen.gauge))
    elif form in (FIRST_ORDER_CV, SECOND_ORDER_CV):
        if lifted is None or lifted.kind != form:
            have = "an optimal-control problem" if lifted is None else lifted.kind
            raise FormMismatch(f"{form} form needs a lifted {form} problem, got {have}")
        e = _cv1_part(lifted, gen) if form == FIRST_ORDER_CV else _cv2_part(lifted, gen)
    else:
        raise ValueError(f"unknown form {form!r}; expected one of {', '.join(FORMS)}")
    return simplify(e)


def build_constant(target: Union[OCProblem, LiftedProblem], gen: Generators,
                   form: str = OPTIMAL_CONTROL, *, force: bool = False,
                   f_index: Optional[int] = None, tol: float = 1e-9, seed=None,
                   box=None) -> MotionConstant:
    """Assemble the constant of motion of ``gen``; refuses non-symmetries unless ``force``."""
    prob, _ = _target(target)
    gen.check_dims(prob)
    opts = {} if seed is None else {"seed": seed}
    verdict = check_invariance(prob, gen, tol, box=box, **opts)
    if not verdict.passed and not force:
        raise NotASymmetry(
            f"generator fails the invariance test ({verdict.failed_part} part, "
            f"ratio {verdict.max_ratio:.3e})", verdict)
    sym = symbolic_part(target, gen, form)
    sign = {OPTIMAL_CONTROL: 1, CONSERVATIVE: 0}.get(form, -1)
    return MotionConstant(form, gen, sym, sign, prob, f_index, verdict.passed, verdict)


@dataclass
class ConservationReport:
    series: np.ndarray
    c_ref: float
    max_abs_drift: float
    rel_drift: float
    form: str = OPTIMAL_CONTROL
    order: Optional[float] = None
    rel_drift_h2: Optional[float] = None
    step_ratio: float = 2.0

    @property
    def at_roundoff(self) -> bool:
        return self.rel_drift <= ROUNDOFF_FLOOR

    def passed(self, tol: float = DRIFT_TOL, min_order: float = ORDER_MIN) -> bool:
        if not self.rel_drift <= tol:
            return False
        if self.rel_drift_h2 is None:
            return True
        return order_ok(self.rel_drift, self.rel_drift_h2, min_order, self.step_ratio)


def _f_column(mc: MotionConstant, traj: Trajectory) -> Optional[np.ndarray]:
    if mc.f_sign == 0:
        return None
    idx = mc.f_index
    if idx is None:
        for j, g in enumerate(traj.symmetries):
            if g == mc.generators:
                idx = j
                break
    if idx is None:
        if mc.problem.is_conservative:
            return np.zeros(len(traj.t))
        raise ValueError("trajectory carries no path-function column for this symmetry")
    if not 0 <= idx < traj.f.shape[1]:
        raise IndexError(f"f column {idx} out of range")
    return traj.f[:, idx]


def constant_series(mc: MotionConstant, traj: Trajectory) -> np.ndarray:
    if traj.problem != mc.problem:
        raise ValueError("trajectory and constant come from different problems")
    if mc.needs_rates and traj.udot is None:
        raise MissingDerivativeCache(
            f"{mc.form} form needs control rates (third derivatives) on the trajectory")
    C = traj.values([mc.symbolic])[:, 0]
    f = _f_column(mc, traj)
    if f is not None:
        C = C + mc.f_sign * f
    return C


def drift(series: np.ndarray):
    c_ref = float(series[0])
    max_abs = float(np.max(np.abs(series - c_ref)))
    return c_ref, max_abs, max_abs / (1.0 + abs(c_ref))


def evaluate_constant(mc: MotionConstant, traj: Trajectory,
                      refined: Optional[Trajectory] = None) -> ConservationReport:
    """Drift of ``mc`` along ``traj``; with ``refined`` (step h/2) also the observed order."""
    C = constant_series(mc, traj)
    c_ref, max_abs, rel = drift(C)
    rep = ConservationReport(C, c_ref, max_abs, rel, mc.form)
    if refined is not None:
        _, _, rel2 = drift(constant_series(mc, refined))
        rep.rel_drift_h2 = rel2
        rep.step_ratio = traj.h / refined.h
        rep.order = observed_order(rel, rel2, rep.step_ratio)
    return rep


def observed_order(d1: float, d2: float, ratio: float = 2.0) -> Optional[float]:
    """``log(d1/d2)/log(ratio)``; None when either drift is at the round-off floor."""
    if d1 <= ROUNDOFF_FLOOR or d2 <= ROUNDOFF_FLOOR:
        return None
    return math.log(d1 / d2) / math.log(ratio)


def order_ok(d1: float, d2: float, min_order: float = ORDER_MIN, ratio: float = 2.0) -> bool:
    """Refining h by ``ratio`` must shrink drift by ``ratio**min_order``.

    A refined drift already at the round-off floor passes: the constant is
    preserved to machine precision and no order can be measured.
    """
    if d2 <= ROUNDOFF_FLOOR:
        return True
    return d1 / d2 >= ratio ** min_order


@dataclass(frozen=True)
class Equivalence:
    max_abs: float
    scale: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.max_abs <= self.bound


def equivalence_check(lifted: LiftedProblem, gen: Generators, traj: Trajectory, *,
                      force: bool = False, f_index: Optional[int] = None,
                      rtol: float = 1e-10) -> Equivalence:
    """Pointwise ``|C_cv + C_oc|`` on a lifted trajectory."""
    if not isinstance(lifted, LiftedProblem):
        raise FormMismatch("equivalence check needs a lifted calculus-of-variations problem")
    oc = build_constant(lifted, gen, OPTIMAL_CONTROL, force=force, f_index=f_index)
    cv = build_constant(lifted, gen, lifted.kind, force=True, f_index=f_index)
    a = constant_series(oc, traj)
    b = constant_series(cv, traj)
    scale = 1.0 + float(max(np.max(np.abs(a)), np.max(np.abs(b))))
    return Equivalence(float(np.max(np.abs(a + b))), scale, rtol * scale)
