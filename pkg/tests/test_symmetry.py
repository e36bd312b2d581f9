import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noether_nc.errors import AnsatzTooLarge, VerificationFailed
from noether_nc.expr import (ZERO, Env, Kind, T, control, costate, diff, evaluate, is_zero,
                             parse, sample_envs, state, state_dot, variables)
from noether_nc.expr.sampling import SamplingBox
from noether_nc.problem import Generators, OCProblem, lift_cv1, lift_cv2
from noether_nc.symmetry import (Ansatz, assemble_system, build_residual, check_invariance,
                                 find_symmetries, monomials)

FORCED = lift_cv1("0.5*(u1^2 - q1^2)", ["cos(2*t)"], (0, 10)).problem
VSQ = lift_cv1("0.5*u1^2", ["u1^2"], (0, 1)).problem
FOURTH = lift_cv2("0.5*(u1^2 + q2^2 + q1^2)", "0.1*q2 + 0.01*u1 - 0.2*udot1", (0, 2)).problem
ZERO_PROB = OCProblem(1, 1, "0", ["0"])


def G(tau, xi, sigma, alpha, gauge="0"):
    return Generators(tau, xi, sigma, alpha, gauge)


def test_velocity_squared_residual_vanishes():
    r = build_residual(VSQ, G("2*t", ["q1"], ["-u1"], ["-p1"]))
    assert r.free_part == ZERO
    assert is_zero(r.qdot_coeff[0]).is_zero


def test_velocity_squared_missing_alpha_breaks_rate_balance():
    r = build_residual(VSQ, G("2*t", ["q1"], ["-u1"], ["0"]))
    # coefficient of qdot is -alpha - p xi_q + H tau_q - Lambda_q = -p1
    assert is_zero(r.qdot_coeff[0] + parse("p1", 1, 1)).is_zero
    assert not check_invariance(VSQ, G("2*t", ["q1"], ["-u1"], ["0"]))


def test_forced_oscillator_time_translation():
    r = build_residual(FORCED, G("1", ["0"], ["0"], ["0"]))
    assert all(is_zero(part).is_zero for part in r.parts())
    assert check_invariance(FORCED, G("5", ["0"], ["0"], ["0"]))


def test_zero_generator():
    r = build_residual(VSQ, Generators.zero(1, 1))
    assert all(part == ZERO for part in r.parts())


@pytest.mark.parametrize("c", [(1, 2, 3), (0, 1, 0), (-0.5, 4, -2)])
def test_velocity_squared_family(c):
    c1, c2, c3 = c
    g = G(f"{2 * c1}*t + {c2}", [f"{c1}*q1 + {c3}"], [f"{-c1}*u1"], [f"{-c1}*p1"])
    assert check_invariance(VSQ, g)


def test_state_scaling_is_not_a_symmetry_of_forced_oscillator():
    v = check_invariance(FORCED, G("1", ["q1"], ["0"], ["0"]))
    assert not v
    assert v.witness is not None and np.isfinite(v.witness_value) and v.witness_value != 0


def test_perturbed_time_generator_gives_witness():
    v = check_invariance(VSQ, G("2*t + t^2", ["q1"], ["-u1"], ["-p1"]))
    assert not v and v.failed_part == "free"
    # the witness really is a point where the free part is nonzero
    r = build_residual(VSQ, G("2*t + t^2", ["q1"], ["-u1"], ["-p1"]))
    assert evaluate(r.free_part, v.witness) == pytest.approx(v.witness_value)
    assert abs(v.witness_value) > 1e-3


def test_control_rate_force_stays_out_of_residual():
    # the lifted force of the fourth-order example uses udot1; it is not part of the residual
    r = build_residual(FOURTH, G("1", ["0", "0"], ["0"], ["0", "0"]))
    for part in r.parts():
        assert not any(v.kind == Kind.CONTROL_DOT for v in variables(part))


def test_reconstruction_and_affinity():
    g = G("t*q1 + 1", ["q1^2 - t"], ["u1*p1"], ["p1 + q1"], "t*q1")
    r = build_residual(VSQ, g)
    rebuilt = r.free_part + r.qdot_coeff[0] * parse("qdot1", 1, 1,
                                                     extra_kinds=(Kind.STATE_DOT,))
    assert is_zero(rebuilt - r.raw).is_zero
    assert is_zero(diff(diff(r.raw, state_dot(0)), state_dot(0))).is_zero


# ----------------------------------------------------------------- properties

coeff_vectors = st.lists(st.floats(-3, 3, allow_nan=False), min_size=16, max_size=16)


@settings(max_examples=30, deadline=None)
@given(coeff_vectors, coeff_vectors, st.floats(-5, 5, allow_nan=False))
def test_residual_is_linear_in_generators(a, b, lam):
    ans = Ansatz(1, 1, 1)
    ga, gb = ans.materialize(a), ans.materialize(b)
    ra, rb = build_residual(FORCED, ga), build_residual(FORCED, gb)
    rs = build_residual(FORCED, ga + gb)
    rl = build_residual(FORCED, ga.scale(lam))
    rng = np.random.default_rng(0)
    box = SamplingBox()
    vars_ = {T, state(0), control(0), costate(0), state_dot(0)}
    for x in sample_envs(vars_, box, 8, rng):
        va, vb = evaluate(ra.raw, x), evaluate(rb.raw, x)
        scale = 1 + abs(va) + abs(vb)
        assert evaluate(rs.raw, x) == pytest.approx(va + vb, abs=1e-10 * scale)
        assert evaluate(rl.raw, x) == pytest.approx(lam * va, abs=1e-10 * scale * (1 + abs(lam)))


@settings(max_examples=20, deadline=None)
@given(st.floats(-10, 10, allow_nan=False).filter(lambda c: abs(c) > 1e-3),
       st.sampled_from([(VSQ, G("2*t", ["q1"], ["-u1"], ["-p1"])),
                        (FORCED, G("1", ["0"], ["0"], ["0"])),
                        (FOURTH, G("1", ["0", "0"], ["0"], ["0", "0"]))]))
def test_scaled_symmetry_is_a_symmetry(c, case):
    prob, g = case
    assert check_invariance(prob, g.scale(c))


@settings(max_examples=20, deadline=None)
@given(st.tuples(*[st.floats(-2, 2, allow_nan=False)] * 4))
def test_exact_on_the_dynamics_manifold(pt):
    t, q, u, p = pt
    g = G("2*t + 1", ["q1 - 3"], ["-u1"], ["-p1"])
    r = build_residual(VSQ, g)
    x = Env(t=t, q=[q], u=[u], p=[p], qdot=[u])        # qdot = phi = u
    assert abs(evaluate(r.raw, x)) <= 1e-9


def test_numeric_assembly_matches_symbolic_residual():
    # M @ c reproduces the residual's free part and qdot coefficient at each sample
    ans = Ansatz(1, 1, 1, gauge=True)
    rng = np.random.default_rng(2)
    c = rng.normal(size=ans.size)
    g = ans.materialize(c)
    r = build_residual(FORCED, g)
    envs = sample_envs([T, state(0), control(0), costate(0)], SamplingBox(), 10, rng)
    M = assemble_system(FORCED, ans, envs)
    got = M @ c
    want = []
    for x in envs:
        want += [evaluate(r.free_part, x), evaluate(r.qdot_coeff[0], x)]
    np.testing.assert_allclose(got, want, atol=1e-10)


# ----------------------------------------------------------------- finder

def test_monomial_order():
    assert monomials(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def test_velocity_squared_basis():
    basis = find_symmetries(VSQ, degree=1)
    assert basis.dimension == 3
    for g in (G("2*t", ["q1"], ["-u1"], ["-p1"]), G("1", ["0"], ["0"], ["0"]),
              G("0", ["1"], ["0"], ["0"])):
        assert basis.distance(g) < 1e-9
        proj = basis.ansatz.materialize(basis.project(basis.ansatz.encode(g)))
        assert check_invariance(VSQ, proj)
    assert basis.distance(G("t", ["0"], ["0"], ["0"])) > 0.1
    ech = [g.to_strings() for g in basis.echelon()]
    assert ech[1] == {"tau": "t", "xi": ["0.5*q1"], "sigma": ["-0.5*u1"],
                      "alpha": ["-0.5*p1"], "gauge": "0"}


def test_basis_is_orthonormal_with_positive_leads():
    basis = find_symmetries(VSQ, degree=1)
    V = basis.vectors
    np.testing.assert_allclose(V @ V.T, np.eye(3), atol=1e-12)
    for v in V:
        assert v[np.flatnonzero(v)[0]] > 0


def test_every_basis_element_rechecks():
    basis = find_symmetries(VSQ, degree=2, gauge=True)
    assert basis.dimension >= 3
    assert all(v.passed for v in basis.verdicts)
    for g in basis.generators:
        assert check_invariance(VSQ, g)


def test_forced_oscillator_basis_contains_time_translation():
    basis = find_symmetries(FORCED, degree=1)
    assert basis.dimension >= 1
    assert basis.distance(G("1", ["0"], ["0"], ["0"])) < 1e-9


def test_fourth_order_lifted_basis():
    basis = find_symmetries(FOURTH, degree=1)
    assert basis.distance(G("1", ["0", "0"], ["0"], ["0", "0"])) < 1e-9


def test_zero_problem_constant_basis():
    basis = find_symmetries(ZERO_PROB, degree=0)
    # the qdot coefficient of the residual is -alpha, so alpha is pinned to 0
    assert basis.ansatz.size == 4
    assert basis.dimension == 3
    for g in basis.generators:
        assert g.alpha[0] == ZERO


def test_deterministic_under_seed():
    a = find_symmetries(VSQ, degree=1, seed=11)
    b = find_symmetries(VSQ, degree=1, seed=11)
    assert np.array_equal(a.vectors, b.vectors)


def test_ansatz_too_large():
    prob = OCProblem(2, 2, "u1^2 + u2^2", ["u1", "u2"])
    with pytest.raises(AnsatzTooLarge):
        find_symmetries(prob, degree=4)


def test_truncated_nullspace_fails_verification():
    with pytest.raises(VerificationFailed) as info:
        find_symmetries(FORCED, degree=1, rank_tol=0.5)
    assert info.value.failures


def test_encode_round_trip():
    ans = Ansatz(1, 1, 2, gauge=True)
    g = G("1 + t^2", ["q1*t"], ["u1*p1 - 2"], ["p1^2"], "q1")
    c = ans.encode(g)
    back = ans.materialize(c)
    diff_gen = (back + g.scale(-1.0)).simplified()
    assert all(is_zero(e, tol=1e-9).is_zero for e in diff_gen.components())
    np.testing.assert_allclose(ans.encode(back), c, atol=1e-9)
    with pytest.raises(ValueError):
        ans.encode(G("t^3", ["0"], ["0"], ["0"]))
