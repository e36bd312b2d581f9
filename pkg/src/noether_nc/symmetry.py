"""Invariance residual, symmetry decision, and symmetry search by polynomial ansatz.

The residual of a candidate ``(tau, xi, sigma, alpha, Lambda)`` is::

    R = tau H_t + xi.H_q + sigma.H_u + alpha.(H_p - qdot) - p.D(xi) + D(tau) H - D(Lambda)

with ``D(g) = g_t + sum_i g_{q_i} qdot_i``. ``qdot`` is kept as a formal
indeterminate, so a symmetry needs both the qdot-free part and every qdot
coefficient to vanish identically.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import AnsatzTooLarge, VerificationFailed
from .expr import (DEFAULT_SEED, ZERO, Constant, Env, Expr, T, Var, add, compile_exprs,
                   control, costate, diff, is_zero, mul, neg, power, sample_envs,
                   simplify, state, state_dot, substitute)
from .expr.sampling import as_box
from .problem import Generators, OCProblem

log = logging.getLogger(__name__)

MAX_UNKNOWNS = 512
RANK_TOL = 1e-8
MIN_SAMPLES = 128
_CLEAN = 1e-12


def total_derivative(g: Expr, n: int) -> Expr:
    """``dg/dt`` for g = g(t, q), with formal state rates ``qdot_i``."""
    terms = [diff(g, T, simplified=False)]
    for i in range(n):
        dq = diff(g, state(i), simplified=False)
        if dq != ZERO:
            terms.append(mul(dq, Var(state_dot(i))))
    return add(*terms)


@dataclass(frozen=True)
class Residual:
    free_part: Expr
    qdot_coeff: tuple
    raw: Expr

    def parts(self):
        return (self.free_part, *self.qdot_coeff)


def build_residual(prob: OCProblem, gen: Generators) -> Residual:
    gen.check_dims(prob)
    n, m = prob.n, prob.m
    H = prob.H
    terms = [mul(gen.tau, prob.H_t)]
    terms += [mul(gen.xi[i], prob.H_q[i]) for i in range(n)]
    terms += [mul(gen.sigma[j], prob.H_u[j]) for j in range(m)]
    terms += [mul(gen.alpha[i], add(prob.H_p[i], neg(Var(state_dot(i))))) for i in range(n)]
    terms += [neg(mul(Var(costate(i)), total_derivative(gen.xi[i], n))) for i in range(n)]
    terms.append(mul(total_derivative(gen.tau, n), H))
    terms.append(neg(total_derivative(gen.gauge, n)))
    raw = add(*terms)
    free = simplify(substitute(raw, {state_dot(i): ZERO for i in range(n)}))
    coeff = tuple(diff(raw, state_dot(i)) for i in range(n))
    return Residual(free, coeff, raw)


@dataclass
class InvarianceVerdict:
    passed: bool
    tests: dict
    max_ratio: float
    max_abs: float
    failed_part: Optional[str] = None
    witness: Optional[Env] = None
    witness_value: Optional[float] = None

    def __bool__(self):
        return self.passed


def check_invariance(prob: OCProblem, gen: Generators, tol: float = 1e-9, *,
                     box=None, seed: int = DEFAULT_SEED, n_samples: int = 64,
                     residual: Residual = None) -> InvarianceVerdict:
    """Decide whether ``gen`` is a symmetry (up to its gauge term) of ``prob``."""
    res = residual or build_residual(prob, gen)
    names = ["free"] + [f"qdot{i + 1}" for i in range(prob.n)]
    tests = {}
    failed = None
    for name, part in zip(names, res.parts()):
        zt = is_zero(part, box, tol, n_samples=n_samples, seed=seed)
        tests[name] = zt
        if not zt and (failed is None or zt.max_ratio > tests[failed].max_ratio):
            failed = name
    worst = tests[failed] if failed else None
    return InvarianceVerdict(
        passed=failed is None, tests=tests,
        max_ratio=max(zt.max_ratio for zt in tests.values()),
        max_abs=max(zt.max_abs for zt in tests.values()),
        failed_part=failed,
        witness=worst.witness if worst is not None else None,
        witness_value=worst.witness_value if worst is not None else None)


# --------------------------------------------------------------------------
# ansatz

def monomials(nvars: int, degree: int) -> List[tuple]:
    """Exponent tuples of total degree <= ``degree``, graded lexicographic.

    Within a degree, tuples are in descending lexicographic order, so the
    first variable (t) leads: for (t, q) and degree 1 this gives 1, t, q.
    """
    out = []
    for d in range(degree + 1):
        level = [e for e in itertools.product(range(d + 1), repeat=nvars) if sum(e) == d]
        out.extend(sorted(level, reverse=True))
    return out


@dataclass(frozen=True)
class _Block:
    name: str          # 'tau', 'xi', 'sigma', 'alpha', 'gauge'
    index: int         # component index within xi/sigma/alpha
    variables: tuple   # VarIds spanned by the monomials
    exps: tuple        # exponent tuples
    offset: int


class Ansatz:
    """Polynomial parametrization of a generator set with unknown coefficients.

    ``degree`` is an int or a mapping with keys among tau, xi, sigma, alpha,
    gauge. tau, xi and gauge are polynomials in (t, q); sigma and alpha in
    (t, q, u, p).
    """

    def __init__(self, n: int, m: int, degree=1, gauge: bool = False):
        if isinstance(degree, int):
            degrees = dict.fromkeys(("tau", "xi", "sigma", "alpha", "gauge"), degree)
        else:
            degrees = {k: degree.get(k, 0) for k in ("tau", "xi", "sigma", "alpha", "gauge")}
        if any(d < 0 for d in degrees.values()):
            raise ValueError("ansatz degrees must be >= 0")
        self.n, self.m, self.gauge, self.degrees = n, m, gauge, degrees
        tq = (T, *(state(i) for i in range(n)))
        full = tq + tuple(control(j) for j in range(m)) + tuple(costate(i) for i in range(n))
        layout = [("tau", 0, tq)] + [("xi", i, tq) for i in range(n)]
        layout += [("sigma", j, full) for j in range(m)]
        layout += [("alpha", i, full) for i in range(n)]
        if gauge:
            layout.append(("gauge", 0, tq))
        blocks, offset = [], 0
        for name, idx, vars_ in layout:
            exps = tuple(monomials(len(vars_), degrees[name]))
            blocks.append(_Block(name, idx, vars_, exps, offset))
            offset += len(exps)
        self.blocks = tuple(blocks)
        self.size = offset

    def describe(self) -> dict:
        return {"degrees": dict(self.degrees), "gauge": self.gauge, "unknowns": self.size,
                "monomial_order": "graded lexicographic in (t, q..., u..., p...)"}

    def labels(self) -> List[str]:
        out = []
        for b in self.blocks:
            comp = b.name if b.name in ("tau", "gauge") else f"{b.name}{b.index + 1}"
            for e in b.exps:
                out.append(f"{comp}:{_mono_text(b.variables, e)}")
        return out

    def materialize(self, coeffs: Sequence[float]) -> Generators:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.size,):
            raise ValueError(f"expected {self.size} coefficients")
        comps = {"tau": [ZERO], "xi": [ZERO] * self.n, "sigma": [ZERO] * self.m,
                 "alpha": [ZERO] * self.n, "gauge": [ZERO]}
        for b in self.blocks:
            terms = []
            for k, e in enumerate(b.exps):
                c = float(coeffs[b.offset + k])
                if abs(c) <= _CLEAN:
                    continue
                factors = [power(Var(v), ex) for v, ex in zip(b.variables, e) if ex]
                terms.append(mul(Constant(c), *factors))
            comps[b.name][b.index] = simplify(add(*terms))
        return Generators(comps["tau"][0], tuple(comps["xi"]), tuple(comps["sigma"]),
                          tuple(comps["alpha"]), comps["gauge"][0])

    def encode(self, gen: Generators, *, seed: int = DEFAULT_SEED, tol: float = 1e-9):
        """Coefficient vector of ``gen`` in this ansatz (least squares on samples).

        Raises ValueError if ``gen`` is not representable.
        """
        if (gen.n, gen.m) != (self.n, self.m):
            raise ValueError("generator dimensions do not match the ansatz")
        if not self.gauge and simplify(gen.gauge) != ZERO:
            raise ValueError("ansatz has no gauge term but the generator does")
        rng = np.random.default_rng(seed)
        out = np.zeros(self.size)
        comp_expr = {"tau": lambda i: gen.tau, "xi": lambda i: gen.xi[i],
                     "sigma": lambda i: gen.sigma[i], "alpha": lambda i: gen.alpha[i],
                     "gauge": lambda i: gen.gauge}
        for b in self.blocks:
            count = max(4 * len(b.exps), 32)
            envs = sample_envs(b.variables, as_box(None), count, rng)
            target = compile_exprs([comp_expr[b.name](b.index)])
            A = np.array([[_mono_value(b.variables, e, env) for e in b.exps] for env in envs])
            y = np.array([target(*env.args())[0] for env in envs])
            sol, *_ = np.linalg.lstsq(A, y, rcond=None)
            misfit = np.max(np.abs(A @ sol - y)) if len(y) else 0.0
            if misfit > tol * (1.0 + np.max(np.abs(y))):
                raise ValueError(f"{b.name} component not representable in the ansatz "
                                 f"(misfit {misfit:.3g})")
            out[b.offset:b.offset + len(b.exps)] = sol
        return out


def _mono_text(vars_, e):
    parts = [str(v) if ex == 1 else f"{v}^{ex}" for v, ex in zip(vars_, e) if ex]
    return "*".join(parts) or "1"


def _mono_value(vars_, e, env):
    val = 1.0
    for v, ex in zip(vars_, e):
        if ex:
            val *= env.lookup(v) ** ex
    return val


def _mono_grad(vars_, e, env, wrt):
    """Partial derivative of the monomial with respect to variable position ``wrt``."""
    ex = e[wrt]
    if ex == 0:
        return 0.0
    val = float(ex)
    for k, (v, ek) in enumerate(zip(vars_, e)):
        if k == wrt:
            if ek > 1:
                val *= env.lookup(v) ** (ek - 1)
        elif ek:
            val *= env.lookup(v) ** ek
    return val


def assemble_system(prob: OCProblem, ansatz: Ansatz, envs: Sequence[Env]) -> np.ndarray:
    """Numeric matrix M with M @ c = residual parts at each sample point.

    Rows are ordered per sample: free part, then each qdot coefficient.
    Assembled from numeric values of H and its partials, independently of the
    symbolic residual of :func:`build_residual`.
    """
    n, m = prob.n, prob.m
    hfun = compile_exprs([prob.H, prob.H_t, *prob.H_q, *prob.H_u, *prob.H_p])
    rows = n + 1
    M = np.zeros((rows * len(envs), ansatz.size))
    for s, env in enumerate(envs):
        vals = hfun(*env.args())
        H, Ht = vals[0], vals[1]
        Hq = vals[2:2 + n]
        Hu = vals[2 + n:2 + n + m]
        Hp = vals[2 + n + m:2 + 2 * n + m]
        r0 = rows * s
        for b in ansatz.blocks:
            # positions of t and q_j inside the block's variables (always leading)
            for k, e in enumerate(b.exps):
                col = b.offset + k
                mv = _mono_value(b.variables, e, env)
                mt = _mono_grad(b.variables, e, env, 0)
                mq = [_mono_grad(b.variables, e, env, 1 + j) for j in range(n)]
                if b.name == "tau":
                    M[r0, col] = mv * Ht + mt * H
                    for j in range(n):
                        M[r0 + 1 + j, col] = H * mq[j]
                elif b.name == "xi":
                    i = b.index
                    pi = env.p[i]
                    M[r0, col] = mv * Hq[i] - pi * mt
                    for j in range(n):
                        M[r0 + 1 + j, col] = -pi * mq[j]
                elif b.name == "sigma":
                    M[r0, col] = mv * Hu[b.index]
                elif b.name == "alpha":
                    M[r0, col] = mv * Hp[b.index]
                    M[r0 + 1 + b.index, col] = -mv
                else:  # gauge
                    M[r0, col] = -mt
                    for j in range(n):
                        M[r0 + 1 + j, col] = -mq[j]
    return M


def _echelon(null: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Reduced row echelon form of the row space of ``null`` (canonical for the span)."""
    A = null.copy()
    k, N = A.shape
    row = 0
    for col in range(N):
        if row == k:
            break
        piv = row + int(np.argmax(np.abs(A[row:, col])))
        if abs(A[piv, col]) <= tol:
            continue
        A[[row, piv]] = A[[piv, row]]
        A[row] /= A[row, col]
        for r in range(k):
            if r != row:
                A[r] -= A[r, col] * A[row]
        row += 1
    A = A[:row]
    A[np.abs(A) <= _CLEAN] = 0.0
    # sampling noise sits far below 12 significant digits
    return np.array([[float(f"{x:.12g}") for x in r] for r in A]).reshape(A.shape)


def _orthonormal(ech: np.ndarray) -> np.ndarray:
    if len(ech) == 0:
        return ech
    q, _ = np.linalg.qr(ech.T)
    basis = q.T.copy()
    basis[np.abs(basis) <= _CLEAN] = 0.0
    for v in basis:
        nz = np.flatnonzero(np.abs(v) > _CLEAN)
        if len(nz) and v[nz[0]] < 0:
            v *= -1.0
    return basis


@dataclass
class SymmetryBasis:
    ansatz: Ansatz
    vectors: np.ndarray                 # (dimension, unknowns), orthonormal rows
    echelon_vectors: np.ndarray         # same span, reduced row echelon form
    singular_values: np.ndarray
    rank: int
    samples: int
    verdicts: list = field(default_factory=list)

    @property
    def dimension(self) -> int:
        return len(self.vectors)

    @property
    def generators(self) -> List[Generators]:
        return [self.ansatz.materialize(v) for v in self.vectors]

    def echelon(self) -> List[Generators]:
        return [self.ansatz.materialize(v) for v in self.echelon_vectors]

    def project(self, coeffs) -> np.ndarray:
        c = np.asarray(coeffs, dtype=float)
        return self.vectors.T @ (self.vectors @ c)

    def distance(self, gen_or_coeffs) -> float:
        """Relative distance of a generator (or coefficient vector) from the span."""
        c = gen_or_coeffs
        if isinstance(c, Generators):
            c = self.ansatz.encode(c)
        c = np.asarray(c, dtype=float)
        norm = np.linalg.norm(c)
        return float(np.linalg.norm(c - self.project(c)) / (norm if norm else 1.0))


def find_symmetries(prob: OCProblem, degree=1, gauge: bool = False, tol: float = 1e-9, *,
                    seed: int = DEFAULT_SEED, box=None, rank_tol: float = RANK_TOL,
                    max_unknowns: int = MAX_UNKNOWNS) -> SymmetryBasis:
    """Basis of all symmetries of ``prob`` within a polynomial ansatz.

    The residual is linear in the ansatz coefficients; sampling it at
    ``max(2 * unknowns, 128)`` points gives ``M c = 0`` whose numerical
    nullspace is returned. Every basis element is re-checked with
    :func:`check_invariance`; failures raise :class:`VerificationFailed`.
    """
    ansatz = Ansatz(prob.n, prob.m, degree, gauge)
    if ansatz.size > max_unknowns:
        raise AnsatzTooLarge(f"ansatz has {ansatz.size} unknowns (limit {max_unknowns})")
    count = max(2 * ansatz.size, MIN_SAMPLES)
    rng = np.random.default_rng([seed, 1])
    vars_ = [T, *(state(i) for i in range(prob.n)), *(control(j) for j in range(prob.m)),
             *(costate(i) for i in range(prob.n))]
    envs = sample_envs(vars_, as_box(box), count, rng)
    M = assemble_system(prob, ansatz, envs)
    _, sv, vt = np.linalg.svd(M, full_matrices=True)
    smax = sv[0] if len(sv) and sv[0] > 0 else 0.0
    rank = int(np.sum(sv > rank_tol * smax)) if smax > 0 else 0
    null = vt[rank:]
    ech = _echelon(null)
    vectors = _orthonormal(ech)
    basis = SymmetryBasis(ansatz, vectors, ech, sv, rank, count)
    failures = []
    for k, g in enumerate(basis.generators):
        verdict = check_invariance(prob, g, tol, box=box, seed=seed)
        basis.verdicts.append(verdict)
        if not verdict:
            failures.append(k)
    log.debug("ansatz %s: rank %d, nullity %d", ansatz.describe(), rank, basis.dimension)
    if failures:
        raise VerificationFailed(
            f"{len(failures)} nullspace vector(s) failed the invariance re-check",
            basis, failures)
    return basis
