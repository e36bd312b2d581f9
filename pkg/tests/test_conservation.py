import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noether_nc.conservation import (CONSERVATIVE, OPTIMAL_CONTROL, ROUNDOFF_FLOOR,
                                     build_constant, constant_series, equivalence_check,
                                     evaluate_constant, observed_order, order_ok, symbolic_part)
from noether_nc.dynamics import IntegratorConfig, integrate_el2, integrate_extremal
from noether_nc.errors import FormMismatch, MissingDerivativeCache, NotASymmetry
from noether_nc.expr import costate, is_zero, parse, substitute
from noether_nc.expr.core import Kind
from noether_nc.problem import (FIRST_ORDER_CV, SECOND_ORDER_CV, Generators, OCProblem,
                                lift_cv1, lift_cv2)

FORCED = lift_cv1("0.5*(u1^2 - q1^2)", ["cos(2*t)"], (0, 10))
FREE_OSC = lift_cv1("0.5*(u1^2 - q1^2)", ["0"], (0, 10))
VSQ = lift_cv1("0.5*u1^2", ["u1^2"], (0, 1))
FOURTH = lift_cv2("0.5*(u1^2 + q2^2 + q1^2)", "0.1*q2 + 0.01*u1 - 0.2*udot1", (0, 2))
ZERO_PROB = OCProblem(1, 1, "0", ["0"])

TIME = Generators("1", ["0"], ["0"], ["0"])
TIME2 = Generators("1", ["0", "0"], ["0"], ["0", "0"])
VSQ_SCALE = Generators("2*t", ["q1"], ["-u1"], ["-p1"])


def vsq_combo(c1, c2, c3):
    return Generators(f"{2 * c1}*t + {c2}", [f"{c1}*q1 + {c3}"], [f"{-c1}*u1"], [f"{-c1}*p1"])


def run_forced(gens, h=1e-3, lp=FORCED):
    return integrate_extremal(lp.problem, [1.0], [0.0], gens, IntegratorConfig(h=h))


def run_vsq(gens, h=1e-3):
    return integrate_extremal(VSQ.problem, [0.0], [-1.0], gens, IntegratorConfig(h=h))


def run_fourth(gens, h=1e-3):
    return integrate_el2(FOURTH, 1.0, 0.0, 0.0, 0.0, gens, IntegratorConfig(h=h))


# ------------------------------------------------------------ symbolic forms

def test_time_translation_constant_is_hamiltonian_plus_f():
    mc = build_constant(FORCED, TIME)
    assert is_zero(mc.symbolic - FORCED.problem.H).is_zero
    assert mc.f_sign == 1
    assert mc.describe().endswith("+ f")


def test_conservative_form_has_no_path_term():
    mc = build_constant(FREE_OSC, TIME, CONSERVATIVE)
    assert mc.f_sign == 0
    assert is_zero(mc.symbolic - FREE_OSC.problem.H).is_zero


def test_velocity_squared_symbolic_part():
    mc = build_constant(VSQ, VSQ_SCALE)
    want = parse("2*t*(-u1^2/2 + p1*u1) - p1*q1", 1, 1)
    assert is_zero(mc.symbolic - want).is_zero


def test_cv_forms_have_negative_sign():
    assert build_constant(VSQ, VSQ_SCALE, FIRST_ORDER_CV).f_sign == -1
    mc = build_constant(FOURTH, TIME2, SECOND_ORDER_CV)
    assert mc.f_sign == -1 and mc.needs_rates


def test_first_order_cv_is_negated_oc_on_costate_manifold():
    # substituting p = L_u, hand derived for each Lagrangian
    for lp, gen, p in [(VSQ, VSQ_SCALE, "u1"), (FORCED, TIME, "u1"),
                       (VSQ, Generators("t^2", ["q1*t"], ["0"], ["0"], "q1"), "u1")]:
        oc = symbolic_part(lp, gen, OPTIMAL_CONTROL)
        cv = symbolic_part(lp, gen, FIRST_ORDER_CV)
        oc = substitute(oc, {costate(0): parse(p, 1, 1)})
        assert is_zero(oc + cv).is_zero


def test_second_order_cv_is_negated_oc_on_costate_manifold():
    # L = (u^2 + q2^2 + q1^2)/2: L_u = u1, L_q2 = q2, D L_u = udot1
    p1 = parse("q2 - udot1", 2, 1, extra_kinds=(Kind.CONTROL_DOT,))
    p2 = parse("u1", 2, 1)
    for gen in (TIME2, Generators("t", ["q1", "q2*t"], ["u1"], ["p1", "0"], "q1*t")):
        oc = symbolic_part(FOURTH, gen, OPTIMAL_CONTROL)
        cv = symbolic_part(FOURTH, gen, SECOND_ORDER_CV)
        oc = substitute(oc, {costate(0): p1, costate(1): p2})
        assert is_zero(oc + cv).is_zero


def test_form_mismatch():
    with pytest.raises(FormMismatch):
        build_constant(VSQ.problem, VSQ_SCALE, FIRST_ORDER_CV)
    with pytest.raises(FormMismatch):
        build_constant(FOURTH, TIME2, FIRST_ORDER_CV)
    with pytest.raises(FormMismatch):
        build_constant(VSQ, VSQ_SCALE, SECOND_ORDER_CV)
    with pytest.raises(ValueError):
        build_constant(VSQ, VSQ_SCALE, "Lagrangian")


def test_non_symmetry_is_refused_unless_forced():
    bad = Generators("1", ["q1"], ["0"], ["0"])
    with pytest.raises(NotASymmetry) as info:
        build_constant(FORCED, bad)
    assert info.value.verdict is not None
    mc = build_constant(FORCED, bad, force=True)
    assert not mc.verified


# ------------------------------------------------------------ along trajectories

def test_velocity_squared_constants_conserved():
    gens = [VSQ_SCALE, TIME, Generators("0", ["1"], ["0"], ["0"]), vsq_combo(1, 1, 1)]
    traj = run_vsq(gens)
    for g in gens:
        rep = evaluate_constant(build_constant(VSQ, g), traj)
        assert rep.rel_drift <= 1e-9


def test_velocity_squared_scaling_constant_value():
    # at t = 0: H = -1/2 + 1 = 1/2, p q = 0, f = 0, so C = 0
    traj = run_vsq([VSQ_SCALE])
    rep = evaluate_constant(build_constant(VSQ, VSQ_SCALE), traj)
    assert rep.c_ref == pytest.approx(0.0, abs=1e-15)
    assert rep.max_abs_drift <= 1e-9


def test_free_oscillator_energy():
    traj = run_forced([TIME], lp=FREE_OSC)
    for form in (OPTIMAL_CONTROL, CONSERVATIVE):
        rep = evaluate_constant(build_constant(FREE_OSC, TIME, form), traj)
        assert rep.rel_drift <= 1e-10
        assert rep.c_ref == pytest.approx(0.5)


def test_forced_oscillator_constant():
    traj = run_forced([TIME])
    rep = evaluate_constant(build_constant(FORCED, TIME), traj)
    assert rep.rel_drift <= 1e-6
    # H alone is not conserved under the forcing
    H = traj.values([FORCED.problem.H])[:, 0]
    assert np.ptp(H) > 0.1


def test_fourth_order_constant_both_routes():
    traj = run_fourth([TIME2])
    for form in (OPTIMAL_CONTROL, SECOND_ORDER_CV):
        rep = evaluate_constant(build_constant(FOURTH, TIME2, form), traj)
        assert rep.rel_drift <= 1e-6


def test_zero_problem_drift_is_exactly_zero():
    traj = integrate_extremal(ZERO_PROB, [0.3], [0.7], [TIME], IntegratorConfig(h=1e-2))
    for g in (TIME, Generators("0", ["1"], ["0"], ["0"]), Generators("0", ["0"], ["1"], ["0"])):
        rep = evaluate_constant(build_constant(ZERO_PROB, g), traj)
        assert rep.max_abs_drift == 0.0


def test_missing_rates():
    lp = lift_cv2("0.5*(u1^2 + q2^2)", "0", (0, 1))
    traj = integrate_extremal(lp.problem, [0.0, 1.0], [0.0, 1.0], [TIME2],
                              IntegratorConfig(h=1e-2), control_rates=False)
    assert traj.udot is None
    with pytest.raises(MissingDerivativeCache):
        constant_series(build_constant(lp, TIME2, SECOND_ORDER_CV), traj)
    # the optimal-control form does not need them
    assert evaluate_constant(build_constant(lp, TIME2), traj).rel_drift <= 1e-6


def test_constant_and_trajectory_must_match():
    traj = run_vsq([VSQ_SCALE], h=1e-2)
    with pytest.raises(ValueError):
        constant_series(build_constant(FORCED, TIME), traj)


@settings(max_examples=15, deadline=None)
@given(st.floats(-100, 100, allow_nan=False))
def test_gauge_shift_moves_constant_not_drift(c):
    traj = run_vsq([VSQ_SCALE], h=1e-2)
    base = constant_series(build_constant(VSQ, VSQ_SCALE), traj)
    shifted_gen = Generators("2*t", ["q1"], ["-u1"], ["-p1"], repr(c))
    mc = build_constant(VSQ, shifted_gen, f_index=0)
    shifted = constant_series(mc, traj)
    np.testing.assert_allclose(shifted - base, -c, atol=1e-12 * (1 + abs(c)))
    d0 = np.max(np.abs(base - base[0]))
    d1 = np.max(np.abs(shifted - shifted[0]))
    assert d1 == pytest.approx(d0, abs=1e-12 * (1 + abs(c)))


@settings(max_examples=10, deadline=None)
@given(st.tuples(*[st.floats(-2, 2, allow_nan=False)] * 3))
def test_linear_combination_constant_is_combination(c):
    c1, c2, c3 = c
    parts = [VSQ_SCALE, TIME, Generators("0", ["1"], ["0"], ["0"])]
    combo = vsq_combo(c1, c2, c3)
    traj = run_vsq(parts + [combo], h=1e-2)
    series = [constant_series(build_constant(VSQ, g), traj) for g in parts]
    want = c1 * series[0] + c2 * series[1] + c3 * series[2]
    got = constant_series(build_constant(VSQ, combo), traj)
    np.testing.assert_allclose(got, want, atol=1e-9 * (1 + np.max(np.abs(want))))


# ------------------------------------------------------------ equivalence

@pytest.mark.parametrize("case", ["vsq", "fourth", "forced"])
def test_cv_and_oc_agree(case):
    lp, gen, traj = {
        "vsq": lambda: (VSQ, VSQ_SCALE, run_vsq([VSQ_SCALE])),
        "fourth": lambda: (FOURTH, TIME2, run_fourth([TIME2])),
        "forced": lambda: (FORCED, TIME, run_forced([TIME])),
    }[case]()
    eq = equivalence_check(lp, gen, traj)
    assert eq.passed, (eq.max_abs, eq.bound)


def test_equivalence_needs_lifted_problem():
    traj = run_vsq([VSQ_SCALE], h=1e-2)
    with pytest.raises(FormMismatch):
        equivalence_check(VSQ.problem, VSQ_SCALE, traj)


# ------------------------------------------------------------ order bookkeeping

def test_observed_order_and_floor():
    assert observed_order(1.6e-6, 1e-7) == pytest.approx(4.0)
    assert observed_order(1e-14, 1e-15) is None
    assert order_ok(1.6e-6, 1e-7)
    assert not order_ok(1e-6, 5e-7)
    assert order_ok(1e-13, ROUNDOFF_FLOOR / 2)


def test_drift_order_on_forced_oscillator():
    mc = build_constant(FORCED, TIME)
    coarse, fine = run_forced([TIME], h=0.05), run_forced([TIME], h=0.025)
    rep = evaluate_constant(mc, coarse, fine)
    assert rep.step_ratio == pytest.approx(2.0)
    assert rep.order is not None and rep.order >= 3.5
    assert rep.passed(tol=1e-2)


def test_exactly_preserved_constant_reports_roundoff():
    # C = -p + f is linear in the state, so RK4 reproduces it exactly
    g = Generators("0", ["1"], ["0"], ["0"])
    mc = build_constant(VSQ, g)
    rep = evaluate_constant(mc, run_vsq([g], h=0.05), run_vsq([g], h=0.025))
    assert rep.at_roundoff and rep.order is None and rep.passed()
