"""Nonconservative extremals by fixed-step RK4.

The augmented state ``(q, p, f_1..f_K)`` follows::

    qdot = phi(t, q, u),   pdot = -H_q + Q,   fdot_j = Q . (xi_j - tau_j qdot)

with ``u`` re-solved from ``H_u = 0`` at every stage. Second-order
calculus-of-variations problems can instead be integrated directly as the
fourth-order nonconservative Euler-Lagrange equation (:func:`integrate_el2`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NewtonDiverged, NonFiniteState, SingularLagrangian
from .expr import (ZERO, Env, Expr, Kind, T, Var, add, compile_exprs, control, costate,
                   diff, is_zero, mul, neg, parse, quotient, simplify, state,
                   substitute, control_dot, free_of)
from .problem import SECOND_ORDER_CV, Generators, LiftedProblem, OCProblem

log = logging.getLogger(__name__)

BLOWUP = 1e12


@dataclass(frozen=True)
class IntegratorConfig:
    h: float = 1e-3
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    control_law: Optional[tuple] = None   # m expressions in (t, q, p)

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"step size must be positive, got {self.h}")
        if self.newton_tol <= 0 or self.newton_max_iter < 1:
            raise ValueError("invalid Newton settings")
        if self.control_law is not None:
            law = tuple(parse(e) if isinstance(e, str) else e for e in self.control_law)
            for e in law:
                if not free_of(e, (Kind.CONTROL, Kind.STATE_DOT, Kind.CONTROL_DOT)):
                    raise ValueError("control law may depend on t, q and p only")
            object.__setattr__(self, "control_law", law)


def time_grid(a: float, b: float, h: float) -> np.ndarray:
    """Nodes a, a+h, ..., b; a final shorter step is added when h does not divide b-a."""
    span = b - a
    steps = round(span / h)
    if steps >= 1 and abs(steps * h - span) <= 1e-9 * span:
        grid = a + h * np.arange(steps + 1)
    else:
        steps = int(math.floor(span / h))
        grid = a + h * np.arange(steps + 1)
        grid = np.append(grid, b)
    grid[-1] = b
    return grid


@dataclass
class Trajectory:
    """Integrated extremal on a time grid.

    ``f`` has one column per registered symmetry (``f[0] == 0``). ``udot`` is
    filled when the force uses the control-rate slot (lifted second-order
    problems), where ``u`` and ``udot`` are the second and third derivatives
    of the original coordinate.
    """

    t: np.ndarray
    q: np.ndarray
    u: np.ndarray
    p: np.ndarray
    f: np.ndarray
    qdot: np.ndarray
    problem: OCProblem
    symmetries: tuple
    h: float
    udot: Optional[np.ndarray] = None
    newton: dict = field(default_factory=dict)
    method: str = "hamiltonian"

    @property
    def steps(self) -> int:
        return len(self.t) - 1

    @property
    def qddot(self):
        return self.u if self.udot is not None else None

    @property
    def qdddot(self):
        return self.udot

    def env(self, k: int) -> Env:
        return Env(t=self.t[k], q=self.q[k], u=self.u[k], p=self.p[k], qdot=self.qdot[k],
                   udot=None if self.udot is None else self.udot[k])

    def values(self, exprs: Sequence[Expr]) -> np.ndarray:
        """Evaluate expressions at every node, shape (nodes, len(exprs))."""
        fn = compile_exprs(exprs)
        ud = self.udot
        rows = []
        for k in range(len(self.t)):
            rows.append(fn(float(self.t[k]), self.q[k].tolist(), self.u[k].tolist(),
                           self.p[k].tolist(), self.qdot[k].tolist(),
                           () if ud is None else ud[k].tolist()))
        return np.array(rows, dtype=float).reshape(len(self.t), len(exprs))


# --------------------------------------------------------------------------
# stationary condition

class ControlSolver:
    """Solves ``H_u(t, q, u, p) = 0`` for u by damped Newton (or an explicit law)."""

    def __init__(self, prob: OCProblem, cfg: IntegratorConfig):
        self.m = prob.m
        self.tol = cfg.newton_tol
        self.max_iter = cfg.newton_max_iter
        if cfg.control_law is not None:
            if len(cfg.control_law) != prob.m:
                raise ValueError(f"control law needs {prob.m} components")
            self._law = compile_exprs(cfg.control_law)
        else:
            self._law = None
            self._g = compile_exprs(prob.H_u)
            self._jac = compile_exprs([e for row in prob.H_uu for e in row])

    def residual(self, t, q, u, p):
        return np.array(self._g(t, q, u, p), dtype=float)

    def __call__(self, t, q, p, guess):
        """Return ``(u, iterations)``; ``q``, ``p``, ``guess`` are lists of floats."""
        if self.m == 0:
            return [], 0
        if self._law is not None:
            return list(self._law(t, q, (), p)), 0
        u = np.array(guess, dtype=float)
        g = self.residual(t, q, u.tolist(), p)
        r = float(np.linalg.norm(g))
        for it in range(self.max_iter + 1):
            # a warm start inside tol still gets one step, pushing u to round-off
            if r <= self.tol and (it > 0 or r == 0.0):
                return u.tolist(), it
            if it == self.max_iter:
                break
            J = np.array(self._jac(t, q, u.tolist(), p), dtype=float).reshape(self.m, self.m)
            try:
                step = -np.linalg.solve(J, g)
            except np.linalg.LinAlgError:
                raise NewtonDiverged(f"singular H_uu at t={t}", u.tolist(), r) from None
            lam = 1.0
            while True:
                trial = u + lam * step
                try:
                    g_new = self.residual(t, q, trial.tolist(), p)
                    r_new = float(np.linalg.norm(g_new))
                except ArithmeticError:
                    r_new = math.inf
                if r_new < r or r_new <= self.tol or (r <= self.tol and lam < 0.5):
                    break
                lam *= 0.5
                if lam < 2.0 ** -30:
                    raise NewtonDiverged(f"no descent in Newton step at t={t}", u.tolist(), r)
            u, g, r = trial, g_new, r_new
        raise NewtonDiverged(
            f"stationary condition not solved in {self.max_iter} iterations at t={t} "
            f"(|H_u| = {r:.3e})", u.tolist(), r)


def solve_control(prob: OCProblem, t, q, p, guess=None, cfg: IntegratorConfig = None):
    """Control u with ``|H_u| <= newton_tol`` at (t, q, p)."""
    cfg = cfg or IntegratorConfig()
    guess = [0.0] * prob.m if guess is None else [float(x) for x in guess]
    u, _ = ControlSolver(prob, cfg)(float(t), [float(x) for x in q],
                                    [float(x) for x in p], guess)
    return np.array(u, dtype=float)


class _ControlRate:
    """du/dt along an extremal, from differentiating the stationary condition."""

    def __init__(self, prob: OCProblem, cfg: IntegratorConfig):
        n, m = prob.n, prob.m
        # Q must not feed back into du/dt through a costate coupled to H_u.
        for i in range(n):
            if free_of(prob.Q[i], (Kind.CONTROL_DOT,)):
                continue
            src = cfg.control_law or prob.H_u
            for e in src:
                if not is_zero(diff(e, costate(i))):
                    raise ValueError(
                        f"force Q[{i}] uses the control rate but costate p{i + 1} enters "
                        "the stationary condition; the rate is not explicit")
        self.n, self.m = n, m
        if cfg.control_law is not None:
            law = cfg.control_law
            self.explicit = True
            self._t = compile_exprs([diff(e, T) for e in law])
            self._q = compile_exprs([diff(e, state(i)) for e in law for i in range(n)])
            self._p = compile_exprs([diff(e, costate(i)) for e in law for i in range(n)])
        else:
            self.explicit = False
            self._t = compile_exprs([diff(e, T) for e in prob.H_u])
            self._q = compile_exprs([diff(e, state(i)) for e in prob.H_u for i in range(n)])
            self._p = compile_exprs([diff(e, costate(i)) for e in prob.H_u for i in range(n)])
            self._uu = compile_exprs([e for row in prob.H_uu for e in row])

    def __call__(self, t, q, u, p, qd, pd):
        n, m = self.n, self.m
        gt = np.array(self._t(t, q, u, p))
        gq = np.array(self._q(t, q, u, p)).reshape(m, n)
        gp = np.array(self._p(t, q, u, p)).reshape(m, n)
        rhs = gt + gq @ np.asarray(qd) + gp @ np.asarray(pd)
        if self.explicit:
            return rhs.tolist()
        J = np.array(self._uu(t, q, u, p)).reshape(m, m)
        try:
            return (-np.linalg.solve(J, rhs)).tolist()
        except np.linalg.LinAlgError:
            raise NewtonDiverged(f"singular H_uu while resolving du/dt at t={t}") from None


# --------------------------------------------------------------------------
# RK4 driver

def _rk4(rhs, grid, y0, aux0, on_node):
    """Classic RK4 over ``grid``; ``rhs(t, y, aux) -> (dy, aux)`` threads warm starts."""
    y = np.array(y0, dtype=float)
    aux = aux0
    for k in range(len(grid) - 1):
        t, dt = float(grid[k]), float(grid[k + 1] - grid[k])
        k1, aux = rhs(t, y, aux)
        k2, aux = rhs(t + 0.5 * dt, y + (0.5 * dt) * k1, aux)
        k3, aux = rhs(t + 0.5 * dt, y + (0.5 * dt) * k2, aux)
        k4, aux = rhs(t + dt, y + dt * k3, aux)
        y_new = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y_new)) or np.max(np.abs(y_new)) > BLOWUP:
            raise _BlowUp(t)
        y = y_new
        aux = on_node(k + 1, float(grid[k + 1]), y, aux)
    return y


class _BlowUp(Exception):
    def __init__(self, t):
        self.t = t


class _NewtonStats:
    def __init__(self):
        self.solves = 0
        self.iterations = 0
        self.max_iterations = 0

    def add(self, it):
        self.solves += 1
        self.iterations += it
        self.max_iterations = max(self.max_iterations, it)

    def as_dict(self):
        mean = self.iterations / self.solves if self.solves else 0.0
        return {"solves": self.solves, "max_iterations": self.max_iterations,
                "mean_iterations": mean}


def integrate_extremal(prob: OCProblem, q0, p0, symmetries: Sequence[Generators] = (),
                       cfg: IntegratorConfig = None, *, u_guess=None,
                       control_rates: Optional[bool] = None, interval=None) -> Trajectory:
    """Integrate the nonconservative Hamiltonian system from ``(q0, p0)`` at ``t = a``."""
    cfg = cfg or IntegratorConfig()
    n, m = prob.n, prob.m
    symmetries = tuple(symmetries)
    for g in symmetries:
        g.check_dims(prob)
    q0 = [float(x) for x in q0]
    p0 = [float(x) for x in p0]
    if len(q0) != n or len(p0) != n:
        raise ValueError(f"initial state and costate need {n} components")
    if not all(math.isfinite(x) for x in q0 + p0):
        raise ValueError("initial data must be finite")
    a, b = interval if interval is not None else prob.interval
    grid = time_grid(float(a), float(b), cfg.h)
    K = len(symmetries)

    solver = ControlSolver(prob, cfg)
    phi_f = compile_exprs(prob.phi)
    hq_f = compile_exprs(prob.H_q)
    q_f = compile_exprs(prob.Q)
    gen_f = compile_exprs([e for g in symmetries for e in (g.tau, *g.xi)])
    need_rates = prob.uses_control_rate if control_rates is None else control_rates
    rates = _ControlRate(prob, cfg) if need_rates else None
    zero_ud = [0.0] * m
    stats = _NewtonStats()

    def fields(t, q, p, guess):
        u, it = solver(t, q, p, guess)
        stats.add(it)
        qd = list(phi_f(t, q, u, p))
        hq = hq_f(t, q, u, p)
        ud = ()
        if rates is not None:
            Q0 = q_f(t, q, u, p, qd, zero_ud)
            pd0 = [-hq[i] + Q0[i] for i in range(n)]
            ud = rates(t, q, u, p, qd, pd0)
        Q = q_f(t, q, u, p, qd, ud)
        pd = [-hq[i] + Q[i] for i in range(n)]
        fd = []
        if K:
            gv = gen_f(t, q, u, p)
            for j in range(K):
                tau = gv[j * (n + 1)]
                acc = 0.0
                for i in range(n):
                    acc += Q[i] * (gv[j * (n + 1) + 1 + i] - tau * qd[i])
                fd.append(acc)
        return u, qd, ud, pd, fd

    def rhs(t, y, guess):
        yl = y.tolist()
        u, qd, _, pd, fd = fields(t, yl[:n], yl[n:2 * n], guess)
        return np.array(qd + pd + fd, dtype=float), u

    guess0 = [0.0] * m if u_guess is None else [float(x) for x in u_guess]
    N = len(grid)
    Y = np.zeros((N, 2 * n + K))
    U = np.zeros((N, m))
    QD = np.zeros((N, n))
    UD = np.zeros((N, m)) if rates is not None else None

    def record(k, t, y, guess):
        yl = y.tolist()
        u, qd, ud, _, _ = fields(t, yl[:n], yl[n:2 * n], guess)
        Y[k], U[k], QD[k] = y, u, qd
        if UD is not None:
            UD[k] = ud
        return u

    def build(last):
        sl = slice(0, last + 1)
        return Trajectory(
            t=grid[sl].copy(), q=Y[sl, :n].copy(), u=U[sl].copy(), p=Y[sl, n:2 * n].copy(),
            f=Y[sl, 2 * n:].copy(), qdot=QD[sl].copy(), problem=prob,
            symmetries=symmetries, h=cfg.h, udot=None if UD is None else UD[sl].copy(),
            newton=stats.as_dict(), method="hamiltonian")

    y0 = np.array(q0 + p0 + [0.0] * K)
    u0 = record(0, float(grid[0]), y0, guess0)
    progress = {"k": 0}

    def on_node(k, t, y, guess):
        u = record(k, t, y, guess)
        progress["k"] = k
        return u

    try:
        _rk4(rhs, grid, y0, u0, on_node)
    except _BlowUp:
        last = progress["k"]
        raise NonFiniteState(
            f"state left the finite range after t={grid[last]:.17g}",
            float(grid[last]), build(last)) from None
    except NewtonDiverged as err:
        err.partial = build(progress["k"])
        err.last_good_time = float(grid[progress["k"]])
        raise
    if stats.max_iterations > 5:
        log.info("warm-started Newton needed up to %d iterations", stats.max_iterations)
    return build(N - 1)


# --------------------------------------------------------------------------
# direct fourth-order route for lifted second-order problems

def _jet_vars():
    return [Var(state(k)) for k in range(5)]


def _jet_derivative(e: Expr) -> Expr:
    y = _jet_vars()
    terms = [diff(e, T, simplified=False)]
    for k in range(4):
        terms.append(mul(diff(e, state(k), simplified=False), y[k + 1]))
    return simplify(add(*terms))


@dataclass(frozen=True)
class FourthOrderSystem:
    """Jet-variable form ``y = (q, qdot, qddot, qdddot)`` of a lifted second-order problem."""

    q4: Expr          # qdddd as a function of (t, y0..y3)
    Luu: Expr
    p1: Expr          # costates reconstructed from the jet
    p2: Expr
    force: Expr
    to_jet: dict


def fourth_order_system(lifted: LiftedProblem) -> FourthOrderSystem:
    if lifted.kind != SECOND_ORDER_CV:
        raise ValueError("fourth-order integration needs a lifted second-order problem")
    y = _jet_vars()
    to_jet = {state(0): y[0], state(1): y[1], control(0): y[2], control_dot(0): y[3]}
    L = substitute(lifted.lagrangian, to_jet)
    Q = substitute(lifted.force[0], to_jet)
    Lu = diff(L, state(2))
    Lq2 = diff(L, state(1))
    Lq1 = diff(L, state(0))
    # L_q + Q - D(L_qdot) + D^2(L_qddot) = 0, linear in qdddd with coefficient L_uu
    E = add(Lq1, Q, neg(_jet_derivative(Lq2)), _jet_derivative(_jet_derivative(Lu)))
    coef = diff(E, state(4))
    rest = simplify(substitute(E, {state(4): ZERO}))
    q4 = simplify(neg(quotient(rest, coef))) if coef != ZERO else None
    Luu = diff(Lu, state(2))
    p1 = simplify(add(Lq2, neg(_jet_derivative(Lu))))
    return FourthOrderSystem(q4, Luu, p1, Lu, Q, to_jet)


def integrate_el2(lifted: LiftedProblem, q0, qdot0, qddot0, qdddot0,
                  symmetries: Sequence[Generators] = (), cfg: IntegratorConfig = None, *,
                  interval=None) -> Trajectory:
    """Integrate ``q'''' = F(t, q, q', q'', q''')`` of a lifted second-order problem.

    Returns a Trajectory in the lifted coordinates (q1=q, q2=q', u1=q'',
    udot1=q''') with costates ``p2 = L_qddot`` and ``p1 = L_qdot - d/dt L_qddot``.
    """
    cfg = cfg or IntegratorConfig()
    prob = lifted.problem
    symmetries = tuple(symmetries)
    for g in symmetries:
        g.check_dims(prob)
    sys = fourth_order_system(lifted)
    a, b = interval if interval is not None else prob.interval
    grid = time_grid(float(a), float(b), cfg.h)
    jet0 = [float(v) for v in (_scalar(q0), _scalar(qdot0), _scalar(qddot0), _scalar(qdddot0))]
    if not all(math.isfinite(x) for x in jet0):
        raise ValueError("initial data must be finite")
    luu = compile_exprs([sys.Luu])
    if sys.q4 is None or abs(luu(float(a), jet0 + [0.0], (), ())[0]) < 1e-12:
        raise SingularLagrangian("d^2 L / d qddot^2 vanishes; the Lagrangian is not regular")
    K = len(symmetries)
    q4_f = compile_exprs([sys.q4])
    force_f = compile_exprs([sys.force])
    gens = []
    for g in symmetries:
        gens += [substitute(g.tau, sys.to_jet), substitute(g.xi[0], sys.to_jet)]
    gen_f = compile_exprs(gens)
    costate_f = compile_exprs([sys.p1, sys.p2])

    def rhs(t, y, aux):
        yl = y.tolist()[:4] + [0.0]
        if abs(luu(t, yl, (), ())[0]) < 1e-12:
            raise SingularLagrangian(f"L_uu vanishes at t={t}")
        dy = [yl[1], yl[2], yl[3], q4_f(t, yl, (), ())[0]]
        if K:
            Q = force_f(t, yl, (), ())[0]
            gv = gen_f(t, yl, (), ())
            dy += [Q * (gv[2 * j + 1] - gv[2 * j] * yl[1]) for j in range(K)]
        return np.array(dy, dtype=float), aux

    N = len(grid)
    Y = np.zeros((N, 4 + K))
    Y[0, :4] = jet0
    _rk4_guard = {"k": 0}

    def on_node(k, t, y, aux):
        Y[k] = y
        _rk4_guard["k"] = k
        return aux

    def build(last):
        sl = slice(0, last + 1)
        J = Y[sl, :4]
        P = np.array([costate_f(float(t), row.tolist() + [0.0], (), ())
                      for t, row in zip(grid[sl], J)], dtype=float).reshape(-1, 2)
        return Trajectory(
            t=grid[sl].copy(), q=J[:, :2].copy(), u=J[:, 2:3].copy(), p=P,
            f=Y[sl, 4:].copy(), qdot=J[:, 1:3].copy(), problem=prob, symmetries=symmetries,
            h=cfg.h, udot=J[:, 3:4].copy(), newton={}, method="el2")

    try:
        _rk4(rhs, grid, Y[0], None, on_node)
    except _BlowUp:
        last = _rk4_guard["k"]
        raise NonFiniteState(f"state left the finite range after t={grid[last]:.17g}",
                             float(grid[last]), build(last)) from None
    return build(N - 1)


def _scalar(x):
    if np.ndim(x) == 0:
        return float(x)
    (v,) = list(x)
    return float(v)


def jet_to_costates(lifted: LiftedProblem, t, jet) -> tuple:
    sys = fourth_order_system(lifted)
    fn = compile_exprs([sys.p1, sys.p2])
    return fn(float(t), [float(v) for v in jet] + [0.0], (), ())


# --------------------------------------------------------------------------
# diagnostics

def hamiltonian_rate_defect(traj: Trajectory) -> np.ndarray:
    """Central-difference dH/dt minus ``H_t + Q . H_p`` at interior nodes."""
    prob = traj.problem
    vals = traj.values([prob.H, prob.H_t, *prob.Q, *prob.H_p])
    n = prob.n
    H = vals[:, 0]
    pred = vals[:, 1] + np.sum(vals[:, 2:2 + n] * vals[:, 2 + n:2 + 2 * n], axis=1)
    dt = traj.t[2:] - traj.t[:-2]
    return (H[2:] - H[:-2]) / dt - pred[1:-1]


def euler_lagrange_defect(lifted: LiftedProblem, traj: Trajectory) -> np.ndarray:
    """``d/dt L_u - L_q - Q`` by central differences at interior nodes (first-order CV)."""
    prob = lifted.problem
    n = prob.n
    Lu = [diff(prob.L, control(i)) for i in range(n)]
    Lq = [diff(prob.L, state(i)) for i in range(n)]
    vals = traj.values([*Lu, *Lq, *prob.Q])
    dt = (traj.t[2:] - traj.t[:-2])[:, None]
    dLu = (vals[2:, :n] - vals[:-2, :n]) / dt
    return dLu - vals[1:-1, n:2 * n] - vals[1:-1, 2 * n:3 * n]
