"""Command-line front end: ``noether-nc check|find|integrate|verify FILE``.

Exit codes: 0 pass, 1 a check failed, 2 invalid input.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .conservation import (CONSERVATIVE, DRIFT_TOL, OPTIMAL_CONTROL, ORDER_MIN, ROUNDOFF_FLOOR,
                           build_constant, constant_series, equivalence_check,
                           evaluate_constant)
from .dynamics import IntegratorConfig, integrate_el2, integrate_extremal
from .errors import (AnsatzTooLarge, NewtonDiverged, NoetherError, NonFiniteState,
                     ProblemFileError, SingularLagrangian, VerificationFailed)
from .expr import DEFAULT_SEED, Env, compile_exprs, control
from .expr import diff as _diff
from .io import augmented_problem, dump_json, generator_dict, load_problem, write_csv
from .symmetry import check_invariance, find_symmetries

TOOL = "noether-nc"
log = logging.getLogger("noether_nc")


class InvalidInput(Exception):
    pass


def sampling_seed() -> int:
    raw = os.environ.get("NOETHER_SEED")
    if raw is None or raw.strip() == "":
        return DEFAULT_SEED
    try:
        return int(raw.strip(), 0)
    except ValueError:
        raise InvalidInput(f"NOETHER_SEED must be an integer, got {raw!r}") from None


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def env_dict(env: Env):
    if env is None:
        return None
    out = {"t": env.t, "q": list(env.q), "u": list(env.u), "p": list(env.p)}
    if env.qdot:
        out["qdot"] = list(env.qdot)
    if env.udot:
        out["udot"] = list(env.udot)
    return out


def verdict_dict(i, gen, v):
    return {"index": i + 1, "generator": generator_dict(gen), "passed": bool(v.passed),
            "max_ratio": _num(v.max_ratio), "max_abs": _num(v.max_abs),
            "failed_part": v.failed_part, "witness": env_dict(v.witness),
            "witness_value": _num(v.witness_value)}


def _header(command, spec, seed, source):
    return {"tool": TOOL, "version": __version__, "seed": seed, "command": command,
            "problem": {"name": spec.name, "order": spec.order, "source": source}}


def _gen_text(g):
    s = g.to_strings()
    text = (f"tau={s['tau']}, xi=[{', '.join(s['xi'])}], sigma=[{', '.join(s['sigma'])}], "
            f"alpha=[{', '.join(s['alpha'])}]")
    if s["gauge"] != "0":
        text += f", gauge={s['gauge']}"
    return text


# --------------------------------------------------------------------------
# integration

def step_size(spec, h=None, steps=None) -> float:
    if h is not None and steps is not None:
        raise InvalidInput("give --h or --steps, not both")
    if steps is not None:
        if steps < 1:
            raise InvalidInput("--steps must be positive")
        a, b = spec.problem.interval
        return (b - a) / steps
    if h is None:
        h = spec.integrator.get("h", 1e-3)
    if not h > 0:
        raise InvalidInput("step size must be positive")
    return float(h)


def integrate_spec(spec, gens, h):
    """Trajectory of the problem file's initial value problem with ``gens`` registered."""
    if not spec.initial:
        raise InvalidInput(f"{spec.source}: initial: missing field (needed for integration)")
    cfg = IntegratorConfig(h=h, newton_tol=spec.integrator.get("newton_tol", 1e-12),
                           newton_max_iter=int(spec.integrator.get("newton_max_iter", 50)),
                           control_law=spec.control_law)
    init = spec.initial
    if spec.order == "cv2":
        return integrate_el2(spec.lifted, init["q"], init["qdot"], init["qddot"],
                             init["qdddot"], gens, cfg)
    prob = spec.problem
    q0 = init["q"]
    guess = None
    if "p" in init:
        p0 = init["p"]
    else:
        # first-order CV started from (q, qdot): p = dL/dqdot
        env = Env(t=prob.interval[0], q=q0, u=init["qdot"])
        Lu = compile_exprs([_diff(prob.L, control(i)) for i in range(prob.n)])
        p0 = list(Lu(*env.args()))
        guess = init["qdot"]
    return integrate_extremal(prob, q0, p0, gens, cfg, u_guess=guess)


def _traj_meta(traj):
    return {"steps": traj.steps, "h": traj.h, "final_time": float(traj.t[-1]),
            "method": traj.method, "newton": traj.newton}


def c_columns(spec, gens, traj):
    cols = []
    for j, g in enumerate(gens):
        mc = build_constant(spec.target, g, OPTIMAL_CONTROL, force=True, f_index=j)
        cols.append(constant_series(mc, traj))
    return np.column_stack(cols) if cols else np.zeros((len(traj.t), 0))


# --------------------------------------------------------------------------
# commands

def cmd_check(args, seed):
    spec = load_problem(args.file)
    rep = _header("check", spec, seed, args.file)
    rows = []
    ok = True
    for i, g in enumerate(spec.symmetries):
        v = check_invariance(spec.problem, g, args.tol, box=spec.box, seed=seed)
        rows.append(verdict_dict(i, g, v))
        ok &= bool(v.passed)
        if v.passed:
            print(f"PASS symmetry {i + 1}: {_gen_text(g)} (max ratio {v.max_ratio:.2e})")
        else:
            print(f"FAIL symmetry {i + 1}: {_gen_text(g)}")
            print(f"     {v.failed_part} part = {v.witness_value:.6g} at {_env_text(v.witness)}")
    if not spec.symmetries:
        print("no symmetries declared")
    rep["symmetries"] = rows
    rep["status"] = "PASS" if ok else "FAIL"
    _write_report(args.report, rep)
    return rep


def _env_text(env):
    parts = [f"t={env.t:.6g}"]
    for name, vec in (("q", env.q), ("u", env.u), ("p", env.p), ("qdot", env.qdot),
                      ("udot", env.udot)):
        for k, x in enumerate(vec or ()):
            parts.append(f"{name}{k + 1}={x:.6g}")
    return ", ".join(parts)


def cmd_find(args, seed):
    if not 0 <= args.degree <= 4:
        raise InvalidInput("--degree must be between 0 and 4")
    spec = load_problem(args.file)
    rep = _header("find", spec, seed, args.file)
    rep["ansatz"] = {"degree": args.degree, "gauge": bool(args.gauge)}
    try:
        basis = find_symmetries(spec.problem, args.degree, args.gauge, args.tol, seed=seed,
                                box=spec.box)
    except VerificationFailed as err:
        rep["status"] = "FAIL"
        rep["error"] = str(err)
        print(f"FAIL {err}")
        _write_report(args.report, rep)
        return rep
    gens = basis.echelon() if args.echelon else basis.generators
    print(f"basis dimension {basis.dimension} ({basis.ansatz.size} unknowns, rank {basis.rank})")
    for k, g in enumerate(gens):
        print(f"  [{k + 1}] {_gen_text(g)}")
    rep["dimension"] = basis.dimension
    rep["unknowns"] = basis.ansatz.size
    rep["rank"] = basis.rank
    rep["basis"] = [generator_dict(g) for g in gens]
    rep["status"] = "PASS"
    if args.emit:
        Path(args.emit).write_text(dump_json(augmented_problem(spec, gens)))
    _write_report(args.report, rep)
    return rep


def cmd_integrate(args, seed):
    spec = load_problem(args.file)
    h = step_size(spec, args.h, args.steps)
    rep = _header("integrate", spec, seed, args.file)
    gens = spec.symmetries
    partial, err = None, None
    try:
        traj = integrate_spec(spec, gens, h)
    except (NewtonDiverged, NonFiniteState) as e:
        err, traj = e, None
        partial = getattr(e, "partial", None)
    out = traj if traj is not None else partial
    if out is not None:
        C = c_columns(spec, gens, out)
        if args.out:
            with open(args.out, "w", newline="\n") as fh:
                write_csv(fh, out, C)
        elif not args.report or args.report != "-":
            write_csv(sys.stdout, out, C)
        rep["trajectory"] = _traj_meta(out)
    if err is not None:
        rep["status"] = "FAIL"
        rep["error"] = str(err)
        rep["last_good_time"] = _num(getattr(err, "last_good_time", None))
        print(f"FAIL {err}", file=sys.stderr)
    else:
        rep["status"] = "PASS"
    _write_report(args.report, rep)
    return rep


def cmd_verify(args, seed):
    spec = load_problem(args.file)
    h = step_size(spec, args.h)
    rep = _header("verify", spec, seed, args.file)
    prob = spec.problem
    gens = list(spec.symmetries)
    rep["discovered"] = False
    if not gens:
        gens = find_symmetries(prob, 1, seed=seed, box=spec.box).echelon()
        rep["discovered"] = True
    verdicts = [check_invariance(prob, g, args.tol, box=spec.box, seed=seed) for g in gens]
    rep["symmetries"] = [verdict_dict(i, g, v) for i, (g, v) in enumerate(zip(gens, verdicts))]
    ok = all(v.passed for v in verdicts) and bool(gens)
    good = [g for g, v in zip(gens, verdicts) if v.passed]
    index = [i for i, v in enumerate(verdicts) if v.passed]

    forms = [OPTIMAL_CONTROL]
    if prob.is_conservative:
        forms.append(CONSERVATIVE)
    if spec.lifted is not None:
        forms.append(spec.lifted.kind)
    rep["thresholds"] = {"rel_drift": args.drift_tol, "min_order": args.min_order,
                         "roundoff_floor": ROUNDOFF_FLOOR, "equivalence_rtol": 1e-10}

    emit = (lambda s: print(s, file=sys.stderr)) if args.out is None else print
    try:
        traj = integrate_spec(spec, good, h)
        fine = integrate_spec(spec, good, args.h2) if args.h2 else None
    except (NewtonDiverged, NonFiniteState, SingularLagrangian) as e:
        rep["status"] = "FAIL"
        rep["error"] = str(e)
        rep["last_good_time"] = _num(getattr(e, "last_good_time", None))
        emit(f"FAIL integration: {e}")
        _write_report(args.out, rep, default_stdout=True)
        return rep
    rep["trajectory"] = _traj_meta(traj)
    if fine is not None:
        rep["trajectory_h2"] = _traj_meta(fine)

    table = []
    for j, (i, g) in enumerate(zip(index, good)):
        for form in forms:
            mc = build_constant(spec.target, g, form, f_index=j, seed=seed, box=spec.box)
            r = evaluate_constant(mc, traj, fine)
            passed = r.passed(args.drift_tol, args.min_order)
            row = {"symmetry": i + 1, "form": form, "c_ref": r.c_ref,
                   "max_abs_drift": r.max_abs_drift, "rel_drift": r.rel_drift,
                   "passed": passed}
            if fine is not None:
                row["rel_drift_h2"] = r.rel_drift_h2
                row["order"] = _num(r.order)
                row["order_status"] = ("roundoff" if r.rel_drift_h2 <= ROUNDOFF_FLOOR
                                       else "measured")
            table.append(row)
            ok &= passed
            tag = "PASS" if passed else "FAIL"
            extra = ""
            if fine is not None:
                extra = (f", order {r.order:.2f}" if r.order is not None
                         else ", order n/a (round-off)")
            emit(f"{tag} symmetry {i + 1} {form}: rel_drift {r.rel_drift:.3e}{extra}")
        if prob.is_conservative:
            fz = bool(np.all(traj.f[:, j] == 0.0))
            ok &= fz
            table.append({"symmetry": i + 1, "form": "path_term_zero", "passed": fz})
            emit(f"{'PASS' if fz else 'FAIL'} symmetry {i + 1} path term identically zero")
        if spec.lifted is not None:
            eq = equivalence_check(spec.lifted, g, traj, f_index=j)
            table.append({"symmetry": i + 1, "form": "equivalence",
                          "max_abs": eq.max_abs, "bound": eq.bound, "passed": eq.passed})
            ok &= eq.passed
            emit(f"{'PASS' if eq.passed else 'FAIL'} symmetry {i + 1} "
                 f"{spec.lifted.kind} + {OPTIMAL_CONTROL}: {eq.max_abs:.3e} <= {eq.bound:.3e}")
    rep["conservation"] = table
    rep["status"] = "PASS" if ok else "FAIL"
    _write_report(args.out, rep, default_stdout=True)
    return rep


def _write_report(dest, rep, default_stdout=False):
    text = dump_json(rep)
    if dest == "-" or (dest is None and default_stdout):
        sys.stdout.write(text)
    elif dest:
        with open(dest, "w", newline="\n") as fh:
            fh.write(text)


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog=TOOL, description="Symmetries and nonconservative constants of motion.")
    ap.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="test declared symmetries")
    c.add_argument("file", help="problem file, or name of a bundled problem")
    c.add_argument("--tol", type=float, default=1e-9)
    c.add_argument("--report", help="write JSON report here ('-' for stdout)")

    f = sub.add_parser("find", help="compute the symmetry basis of a polynomial ansatz")
    f.add_argument("file")
    f.add_argument("--degree", type=int, default=1)
    f.add_argument("--gauge", action="store_true", help="include a gauge term in the ansatz")
    f.add_argument("--tol", type=float, default=1e-9)
    f.add_argument("--echelon", action="store_true",
                   help="print the reduced echelon basis instead of the orthonormal one")
    f.add_argument("--emit", help="write the problem file with the basis as its symmetries")
    f.add_argument("--report")

    i = sub.add_parser("integrate", help="integrate the extremal and write a CSV")
    i.add_argument("file")
    i.add_argument("--h", type=float)
    i.add_argument("--steps", type=int)
    i.add_argument("--out", help="CSV destination (stdout if omitted)")
    i.add_argument("--report")

    v = sub.add_parser("verify", help="check, integrate and measure conservation")
    v.add_argument("file")
    v.add_argument("--h", type=float)
    v.add_argument("--h2", type=float, help="second step size for the convergence order")
    v.add_argument("--tol", type=float, default=1e-9)
    v.add_argument("--drift-tol", type=float, default=DRIFT_TOL)
    v.add_argument("--min-order", type=float, default=ORDER_MIN)
    v.add_argument("--out", help="JSON report destination (stdout if omitted)")
    return ap


COMMANDS = {"check": cmd_check, "find": cmd_find, "integrate": cmd_integrate,
            "verify": cmd_verify}


def run(argv=None):
    """Run a command; returns ``(exit_code, report)``."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        seed = sampling_seed()
        if getattr(args, "h2", None) is not None and not args.h2 > 0:
            raise InvalidInput("--h2 must be positive")
        rep = COMMANDS[args.command](args, seed)
    except (InvalidInput, ProblemFileError, AnsatzTooLarge) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2, None
    except NoetherError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1, None
    return (0 if rep["status"] == "PASS" else 1), rep


def main(argv=None) -> int:
    code, _ = run(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
