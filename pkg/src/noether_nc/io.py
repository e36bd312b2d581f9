"""Problem files (JSON) and trajectory CSV."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import ExprSyntaxError, ProblemFileError
from .expr import Kind, SamplingBox, Var, compile_exprs, parse, to_string
from .problem import Generators, LiftedProblem, OCProblem, lift_cv1, lift_cv2

ORDERS = ("ocp", "cv1", "cv2")
_KNOWN = {"name", "order", "n", "m", "lagrangian", "dynamics", "force", "interval",
          "initial", "control_law", "symmetries", "integrator", "sampling", "mutations",
          "notes"}


@dataclass
class ProblemSpec:
    """A validated problem file."""

    name: str
    order: str
    n: int
    m: int
    target: object                 # OCProblem, or LiftedProblem for cv1/cv2
    symmetries: List[Generators]
    initial: dict
    integrator: dict
    control_law: Optional[tuple] = None
    box: Optional[SamplingBox] = None
    mutations: List[tuple] = field(default_factory=list)   # (note, Generators)
    data: dict = field(default_factory=dict)
    source: str = ""

    @property
    def problem(self) -> OCProblem:
        return self.target.problem if isinstance(self.target, LiftedProblem) else self.target

    @property
    def lifted(self) -> Optional[LiftedProblem]:
        return self.target if isinstance(self.target, LiftedProblem) else None


class _Ctx:
    def __init__(self, source: str, raw: str):
        self.source = source
        self.raw = raw

    def fail(self, path: str, msg: str):
        raise ProblemFileError(f"{self.source}: {path}: {msg}")

    def line_of(self, text: str) -> Optional[int]:
        i = self.raw.find(json.dumps(text))
        return None if i < 0 else self.raw.count("\n", 0, i) + 1

    def expr(self, path, text, n, m, extra=()):
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            text = repr(text)
        if not isinstance(text, str):
            self.fail(path, f"expected an expression string, got {type(text).__name__}")
        try:
            return parse(text, n, m, extra_kinds=extra)
        except ExprSyntaxError as err:
            line = self.line_of(text)
            where = f" (line {line})" if line else ""
            self.fail(path, f"{err} in {text!r}{where}")

    def exprs(self, path, items, count, n, m, extra=()):
        if not isinstance(items, list):
            self.fail(path, "expected a list of expression strings")
        if count is not None and len(items) != count:
            self.fail(path, f"expected {count} entries, got {len(items)}")
        return tuple(self.expr(f"{path}[{i}]", x, n, m, extra) for i, x in enumerate(items))

    def reals(self, path, items, count):
        if isinstance(items, (int, float)) and not isinstance(items, bool) and count == 1:
            items = [items]
        if not isinstance(items, list) or len(items) != count:
            self.fail(path, f"expected a list of {count} numbers")
        out = []
        for i, x in enumerate(items):
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
                self.fail(f"{path}[{i}]", "expected a finite number")
            out.append(float(x))
        return out

    def integer(self, data, key, lo=0):
        x = data.get(key)
        if isinstance(x, bool) or not isinstance(x, int) or x < lo:
            self.fail(key, f"expected an integer >= {lo}")
        return x


def _generator(ctx, path, g, n, m):
    if not isinstance(g, dict):
        ctx.fail(path, "expected an object with tau, xi, sigma, alpha")
    for key in ("tau", "xi", "sigma", "alpha"):
        if key not in g:
            ctx.fail(path, f"missing field {key!r}")
    tau = ctx.expr(f"{path}.tau", g["tau"], n, m)
    xi = ctx.exprs(f"{path}.xi", g["xi"], n, n, m)
    sigma = ctx.exprs(f"{path}.sigma", g["sigma"], m, n, m)
    alpha = ctx.exprs(f"{path}.alpha", g["alpha"], n, n, m)
    gauge = ctx.expr(f"{path}.gauge", g.get("gauge", "0"), n, m)
    try:
        return Generators(tau, xi, sigma, alpha, gauge)
    except ValueError as err:
        ctx.fail(path, str(err))


def parse_problem(data, source: str = "<problem>", raw: str = "") -> ProblemSpec:
    ctx = _Ctx(source, raw)
    if not isinstance(data, dict):
        ctx.fail("$", "top level must be a JSON object")
    unknown = sorted(set(data) - _KNOWN)
    if unknown:
        ctx.fail(unknown[0], "unknown field")
    order = data.get("order", "ocp")
    if order not in ORDERS:
        ctx.fail("order", f"expected one of {', '.join(ORDERS)}, got {order!r}")
    n = ctx.integer(data, "n", 1)
    m = ctx.integer(data, "m", 0)
    name = data.get("name", Path(source).stem)
    if not isinstance(name, str):
        ctx.fail("name", "expected a string")
    iv = data.get("interval")
    a, b = ctx.reals("interval", iv, 2)
    if not a < b:
        ctx.fail("interval", f"need a < b, got [{a}, {b}]")
    if "lagrangian" not in data:
        ctx.fail("lagrangian", "missing field")

    rate = (Kind.CONTROL_DOT,)
    if order == "ocp":
        L = ctx.expr("lagrangian", data["lagrangian"], n, m)
        if "dynamics" not in data:
            ctx.fail("dynamics", "missing field (required for order 'ocp')")
        phi = ctx.exprs("dynamics", data["dynamics"], n, n, m)
        Q = ctx.exprs("force", data.get("force", ["0"] * n), n, n, m, rate)
        try:
            target = OCProblem(n, m, L, phi, Q, (a, b), name=name)
        except ValueError as err:
            ctx.fail("$", str(err))
        gn, gm = n, m
    elif order == "cv1":
        if m != n:
            ctx.fail("m", f"order 'cv1' needs m == n (controls are velocities), got m={m}")
        if "dynamics" in data:
            ctx.fail("dynamics", "not allowed for order 'cv1'")
        L = ctx.expr("lagrangian", data["lagrangian"], n, n)
        Q = ctx.exprs("force", data.get("force", ["0"] * n), n, n, n)
        try:
            target = lift_cv1(L, Q, (a, b), name=name)
        except ValueError as err:
            ctx.fail("$", str(err))
        gn, gm = n, n
    else:
        if n != 1 or m != 1:
            ctx.fail("n", "order 'cv2' supports one degree of freedom (n = m = 1)")
        if "dynamics" in data:
            ctx.fail("dynamics", "not allowed for order 'cv2'")
        L = ctx.expr("lagrangian", data["lagrangian"], 2, 1)
        Q = ctx.exprs("force", data.get("force", ["0"]), 1, 2, 1, rate)
        try:
            target = lift_cv2(L, Q[0], (a, b), name=name)
        except ValueError as err:
            ctx.fail("$", str(err))
        gn, gm = 2, 1

    syms = data.get("symmetries", [])
    if not isinstance(syms, list):
        ctx.fail("symmetries", "expected a list")
    gens = [_generator(ctx, f"symmetries[{i}]", g, gn, gm) for i, g in enumerate(syms)]

    muts = data.get("mutations", [])
    if not isinstance(muts, list):
        ctx.fail("mutations", "expected a list")
    mutations = []
    for i, g in enumerate(muts):
        note = g.get("note", "") if isinstance(g, dict) else ""
        body = {k: v for k, v in g.items() if k != "note"} if isinstance(g, dict) else g
        mutations.append((note, _generator(ctx, f"mutations[{i}]", body, gn, gm)))

    initial = _initial(ctx, data.get("initial"), order, n)

    law = None
    if data.get("control_law") is not None:
        law = ctx.exprs("control_law", data["control_law"], gm, gn, gm)

    integ = data.get("integrator", {})
    if not isinstance(integ, dict):
        ctx.fail("integrator", "expected an object")
    for key in integ:
        if key not in ("h", "newton_tol", "newton_max_iter"):
            ctx.fail(f"integrator.{key}", "unknown field")
        val = integ[key]
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not val > 0:
            ctx.fail(f"integrator.{key}", "expected a positive number")

    box = None
    if data.get("sampling") is not None:
        box = _sampling(ctx, data["sampling"])

    return ProblemSpec(name, order, n, m, target, gens, initial, dict(integ), law, box,
                       mutations, data, source)


def _initial(ctx, init, order, n):
    if init is None:
        return {}
    if not isinstance(init, dict):
        ctx.fail("initial", "expected an object")
    if order == "cv2":
        keys = ("q", "qdot", "qddot", "qdddot")
        for k in init:
            if k not in keys:
                ctx.fail(f"initial.{k}", "unknown field (cv2 needs q, qdot, qddot, qdddot)")
        return {k: ctx.reals(f"initial.{k}", init.get(k, [0.0]), 1) for k in keys}
    out = {"q": ctx.reals("initial.q", init.get("q"), n)}
    if order == "cv1" and "p" not in init and "qdot" in init:
        out["qdot"] = ctx.reals("initial.qdot", init["qdot"], n)
    else:
        out["p"] = ctx.reals("initial.p", init.get("p"), n)
    for k in init:
        if k not in ("q", "p", "qdot"):
            ctx.fail(f"initial.{k}", "unknown field")
    return out


def _sampling(ctx, spec):
    if not isinstance(spec, dict):
        ctx.fail("sampling", "expected an object of [lo, hi] ranges")
    ranges = {}
    default = (-2.0, 2.0)
    for key, rng in spec.items():
        lo, hi = ctx.reals(f"sampling.{key}", rng, 2)
        if not lo < hi:
            ctx.fail(f"sampling.{key}", "need lo < hi")
        if key == "default":
            default = (lo, hi)
        elif key in ("t", "q", "u", "p", "qdot", "udot"):
            ranges[key] = (lo, hi)
        else:
            try:
                e = parse(key, extra_kinds=(Kind.STATE_DOT, Kind.CONTROL_DOT))
            except ExprSyntaxError:
                e = None
            if not isinstance(e, Var):
                ctx.fail(f"sampling.{key}", "expected a variable name or kind")
            ranges[e.var] = (lo, hi)
    return SamplingBox(default, ranges)


FIXTURE_PACKAGE = "noether_nc.problems"


def resolve_path(name: str) -> Path:
    """A path on disk, or the name of a bundled fixture (with or without .json)."""
    p = Path(name)
    if p.exists():
        return p
    stem = p.name if p.suffix == ".json" else p.name + ".json"
    bundled = resources.files(FIXTURE_PACKAGE) / stem
    if p.parent == Path(".") and bundled.is_file():
        return Path(str(bundled))
    raise ProblemFileError(f"{name}: no such file (and no bundled problem of that name)")


def bundled_problems() -> List[str]:
    return sorted(p.name for p in resources.files(FIXTURE_PACKAGE).iterdir()
                  if p.name.endswith(".json"))


def load_problem(name: str) -> ProblemSpec:
    path = resolve_path(name)
    try:
        raw = path.read_text()
    except OSError as err:
        raise ProblemFileError(f"{name}: {err.strerror}") from None
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as err:
        raise ProblemFileError(
            f"{name}: invalid JSON at line {err.lineno}, column {err.colno}: {err.msg}") from None
    return parse_problem(data, name, raw)


def generator_dict(g: Generators) -> dict:
    return g.to_strings()


def dump_json(obj) -> str:
    """Deterministic JSON text (sorted keys, repr floats, trailing newline)."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


# --------------------------------------------------------------------------
# CSV

def csv_header(n: int, m: int, k: int) -> List[str]:
    return (["t"] + [f"q{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
            + [f"p{i + 1}" for i in range(n)] + [f"f_{j + 1}" for j in range(k)]
            + [f"C_{j + 1}" for j in range(k)])


def csv_rows(traj, C: np.ndarray):
    k = traj.f.shape[1]
    for i in range(len(traj.t)):
        vals = [traj.t[i], *traj.q[i], *traj.u[i], *traj.p[i], *traj.f[i],
                *(C[i] if k else ())]
        yield ",".join(format(float(v), ".17g") for v in vals)


def write_csv(stream, traj, C: np.ndarray):
    n, m, k = traj.q.shape[1], traj.u.shape[1], traj.f.shape[1]
    stream.write(",".join(csv_header(n, m, k)) + "\n")
    for row in csv_rows(traj, C):
        stream.write(row + "\n")


@dataclass
class CsvTrajectory:
    t: np.ndarray
    q: np.ndarray
    u: np.ndarray
    p: np.ndarray
    f: np.ndarray
    C: np.ndarray


def read_csv(path_or_text, n: int, m: int) -> CsvTrajectory:
    text = path_or_text
    if isinstance(path_or_text, Path) or "\n" not in str(path_or_text):
        text = Path(path_or_text).read_text()
    lines = text.rstrip("\n").split("\n")
    header = lines[0].split(",")
    k = (len(header) - 1 - 2 * n - m) // 2
    if header != csv_header(n, m, k):
        raise ValueError(f"unexpected CSV header {header}")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]], dtype=float)
    data = data.reshape(-1, len(header))
    c = np.cumsum([1, n, m, n, k, k])
    return CsvTrajectory(data[:, 0], data[:, c[0]:c[1]], data[:, c[1]:c[2]],
                         data[:, c[2]:c[3]], data[:, c[3]:c[4]], data[:, c[4]:c[5]])


def recompute_constants(spec_target, gens, csv: CsvTrajectory) -> np.ndarray:
    """C columns from the CSV state, with f re-integrated by the trapezoid rule.

    The path integrand ``Q . (xi - tau qdot)`` uses ``qdot = phi``; a control
    rate needed by the force is taken from central differences of u.
    """
    from .conservation import OPTIMAL_CONTROL, symbolic_part

    prob = spec_target.problem if isinstance(spec_target, LiftedProblem) else spec_target
    n, m = prob.n, prob.m
    phi_f = compile_exprs(prob.phi)
    q_f = compile_exprs(prob.Q)
    udot = np.gradient(csv.u, csv.t, axis=0, edge_order=2) if m else np.zeros((len(csv.t), 0))
    out = np.zeros((len(csv.t), len(gens)))
    for j, g in enumerate(gens):
        sym = compile_exprs([symbolic_part(spec_target, g, OPTIMAL_CONTROL), g.tau, *g.xi])
        integrand = np.zeros(len(csv.t))
        base = np.zeros(len(csv.t))
        for k in range(len(csv.t)):
            t, q, u, p = float(csv.t[k]), csv.q[k].tolist(), csv.u[k].tolist(), csv.p[k].tolist()
            qd = phi_f(t, q, u, p)
            Q = q_f(t, q, u, p, qd, udot[k].tolist())
            vals = sym(t, q, u, p, qd, ())
            base[k] = vals[0]
            tau, xi = vals[1], vals[2:]
            integrand[k] = sum(Q[i] * (xi[i] - tau * qd[i]) for i in range(n))
        out[:, j] = base + cumulative_trapezoid(integrand, csv.t, initial=0.0)
    return out


def augmented_problem(spec: ProblemSpec, gens: List[Generators]) -> dict:
    data = dict(spec.data)
    data["symmetries"] = [generator_dict(g) for g in gens]
    return data


__all__ = ["ProblemSpec", "parse_problem", "load_problem", "resolve_path", "bundled_problems",
           "dump_json", "write_csv", "read_csv", "csv_header", "recompute_constants",
           "augmented_problem", "generator_dict", "CsvTrajectory", "to_string"]
