import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noether_nc.expr import ZERO, add, costate, diff, is_zero, neg, parse, to_string
from noether_nc.problem import (FIRST_ORDER_CV, SECOND_ORDER_CV, Generators, OCProblem,
                                hamiltonian, lift_cv1, lift_cv2)


def equal(a, b):
    return is_zero(add(a, neg(b))).is_zero


def test_forced_oscillator_hamiltonian():
    osc = lift_cv1("0.5*(u1^2 - q1^2)", ["0"], (0, 1))
    assert osc.problem.phi == (parse("u1", 1, 1),)
    assert equal(osc.problem.H, parse("-0.5*(u1^2 - q1^2) + p1*u1", 1, 1))


def test_velocity_squared_hamiltonian_and_force():
    vsq = lift_cv1("0.5*u1^2", ["u1^2"], (0, 1))
    assert equal(vsq.problem.H, parse("-u1^2/2 + p1*u1", 1, 1))
    assert to_string(vsq.problem.Q[0]) == "u1^2"
    assert not vsq.problem.is_conservative


def test_zero_problem():
    z = OCProblem(1, 1, "0", ["0"])
    assert hamiltonian(z) == ZERO
    assert z.is_conservative


def test_fourth_order_lifting():
    fourth = lift_cv2("0.5*(u1^2 + q2^2 + q1^2)", "0.1*q2 + 0.01*u1 - 0.2*udot1", (0, 2))
    prob = fourth.problem
    assert (prob.n, prob.m) == (2, 1)
    assert fourth.kind == SECOND_ORDER_CV
    assert equal(prob.H, parse("-0.5*(u1^2 + q2^2 + q1^2) + p1*q2 + p2*u1", 2, 1))
    assert prob.Q[1] == ZERO
    assert prob.uses_control_rate
    assert to_string(prob.Q[0]) == "0.1*q2 + 0.01*u1 - 0.2*udot1"


def test_double_integrator_lifting():
    di = lift_cv2("0.5*u1^2", "0", (0, 1))
    assert di.problem.is_conservative
    assert equal(di.problem.H, parse("-0.5*u1^2 + p1*q2 + p2*u1", 2, 1))


def test_lagrangian_without_velocity_lifts():
    lp = lift_cv1("q1^2", ["0"], (0, 1))
    assert lp.kind == FIRST_ORDER_CV
    assert is_zero(lp.problem.H_uu[0][0]).is_zero


def test_lifting_round_trip():
    fourth = lift_cv2("0.5*(u1^2 + q2^2 + q1^2)", "0", (0, 2))
    rng = np.random.default_rng(0)
    for t, q, qd, qdd in rng.uniform(-2, 2, size=(20, 4)):
        want = 0.5 * (qdd ** 2 + qd ** 2 + q ** 2)
        assert fourth.lagrangian_at(t, [q], [qd], [qdd]) == pytest.approx(want, rel=1e-15)


def test_cv2_rejects_several_dof():
    with pytest.raises(ValueError):
        lift_cv2("u1^2", ["0", "0"], (0, 1))


def test_dimension_checks():
    with pytest.raises(ValueError):
        OCProblem(2, 1, "u1^2", ["u1"])
    with pytest.raises(ValueError):
        OCProblem(1, 1, "p1*u1", ["u1"])
    with pytest.raises(ValueError):
        OCProblem(1, 1, "u1^2", ["u1"], interval=(1, 0))
    with pytest.raises(ValueError):
        OCProblem(1, 1, "u1^2", ["u1 + udot1"])


def test_generator_dependence_restrictions():
    with pytest.raises(ValueError):
        Generators("u1", ["0"], ["0"], ["0"])
    with pytest.raises(ValueError):
        Generators("1", ["p1"], ["0"], ["0"])
    g = Generators("1", ["q1"], ["u1*p1"], ["sin(p1)"])
    assert g.n == 1 and g.m == 1
    with pytest.raises(ValueError):
        g.check_dims(OCProblem(2, 1, "u1^2", ["u1", "q1"]))


def test_generator_arithmetic():
    a = Generators("2*t", ["q1"], ["-u1"], ["-p1"])
    b = Generators.time_translation(1, 1)
    s = (a + b.scale(3.0)).simplified()
    assert s.to_strings()["tau"] == "3 + 2*t"


problems = st.sampled_from([
    ("0.5*(u1^2 - q1^2)", ["u1"], 1, 1),
    ("u1^2 + q1*q2 + sin(t)*u2^2", ["u1 - q2", "q1*u2"], 2, 2),
    ("exp(q1)*u1^2", ["q1^2*u1 + t"], 1, 1),
    ("0", ["0", "q1"], 2, 1),
])


@settings(max_examples=20, deadline=None)
@given(problems)
def test_costate_partials_recover_dynamics(spec):
    L, phi, n, m = spec
    prob = OCProblem(n, m, L, phi)
    for i in range(n):
        assert equal(prob.H_p[i], prob.phi[i])
        for j in range(n):
            assert is_zero(diff(prob.H_p[i], costate(j))).is_zero


def test_problem_equality_by_content():
    a = lift_cv1("0.5*u1^2", ["u1^2"], (0, 1)).problem
    b = lift_cv1("0.5*u1^2", ["u1^2"], (0, 1)).problem
    assert a == b and hash(a) == hash(b)
    assert a != lift_cv1("0.5*u1^2", ["0"], (0, 1)).problem
