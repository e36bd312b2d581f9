"""Probabilistic identity testing by evaluation at pseudo-random points."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from ..errors import DomainError
from .core import Env, Expr, Kind, VarId, additive_terms, as_expr, compile_exprs, evaluate, variables

DEFAULT_SEED = 0x5EED
DEFAULT_SAMPLES = 64
DEFAULT_TOL = 1e-9
DEFAULT_INTERVAL = (-2.0, 2.0)

_KIND_NAMES = {"t": Kind.TIME, "q": Kind.STATE, "u": Kind.CONTROL, "p": Kind.COSTATE,
               "qdot": Kind.STATE_DOT, "udot": Kind.CONTROL_DOT}


@dataclass(frozen=True)
class SamplingBox:
    """Interval per variable. ``ranges`` keys are VarIds or kind names ('t', 'q', ...)."""

    default: tuple = DEFAULT_INTERVAL
    ranges: Mapping = field(default_factory=dict)

    def interval(self, var: VarId):
        if var in self.ranges:
            lo, hi = self.ranges[var]
        else:
            for name, kind in _KIND_NAMES.items():
                if kind == var.kind and name in self.ranges:
                    lo, hi = self.ranges[name]
                    break
            else:
                lo, hi = self.default
        if not lo < hi:
            raise ValueError(f"empty sampling interval for {var}: [{lo}, {hi}]")
        return float(lo), float(hi)


def as_box(box) -> SamplingBox:
    if box is None:
        return SamplingBox()
    if isinstance(box, SamplingBox):
        return box
    return SamplingBox(ranges=dict(box))


def sample_envs(vars_, box, count, rng):
    """Draw ``count`` environments binding every variable in ``vars_``."""
    vars_ = sorted(vars_)
    size = {k: 0 for k in Kind}
    for v in vars_:
        size[v.kind] = max(size[v.kind], v.index + 1)
    intervals = [box.interval(v) for v in vars_]
    lows = np.array([lo for lo, _ in intervals])
    highs = np.array([hi for _, hi in intervals])
    draws = rng.uniform(lows, highs, size=(count, len(vars_)))
    envs = []
    for row in draws:
        vecs = {k: [0.0] * size[k] for k in Kind if k != Kind.TIME}
        t = 0.0
        for v, x in zip(vars_, row.tolist()):
            if v.kind == Kind.TIME:
                t = x
            else:
                vecs[v.kind][v.index] = x
        envs.append(Env(t=t, q=vecs[Kind.STATE], u=vecs[Kind.CONTROL],
                        p=vecs[Kind.COSTATE], qdot=vecs[Kind.STATE_DOT],
                        udot=vecs[Kind.CONTROL_DOT]))
    return envs


@dataclass
class ZeroTest:
    """Outcome of :func:`is_zero`; truthy iff the expression tested as zero."""

    is_zero: bool
    max_abs: float
    max_ratio: float
    samples: int
    witness: Optional[Env] = None
    witness_value: Optional[float] = None

    def __bool__(self):
        return self.is_zero


def is_zero(e: Expr, box=None, tol: float = DEFAULT_TOL, *,
            n_samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED,
            max_attempts: Optional[int] = None) -> ZeroTest:
    """Test ``e == 0`` at ``n_samples`` random points of ``box``.

    A sample passes when ``|e(s)| <= tol * (1 + scale(s))``, scale being the
    largest absolute additive term of ``e`` at ``s``. Samples where ``e`` is
    undefined are redrawn, up to ``max_attempts`` draws in total.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    e = as_expr(e)
    terms = additive_terms(e)
    fn = compile_exprs(terms)
    box = as_box(box)
    rng = np.random.default_rng(seed)
    vars_ = variables(e)
    max_attempts = max_attempts or 20 * n_samples

    accepted = 0
    attempts = 0
    max_abs = 0.0
    worst = (-1.0, None, None)
    while accepted < n_samples:
        if attempts >= max_attempts:
            raise DomainError(
                f"only {accepted} of {n_samples} samples were in the expression's domain")
        batch = sample_envs(vars_, box, n_samples - accepted, rng)
        for env in batch:
            attempts += 1
            try:
                vals = fn(*env.args())
            except DomainError:
                continue
            value = 0.0
            for i, x in enumerate(vals):
                value = x if i == 0 else value + x
            scale = max(abs(x) for x in vals)
            if not np.isfinite(value) or not np.isfinite(scale):
                continue
            accepted += 1
            ratio = abs(value) / (1.0 + scale)
            max_abs = max(max_abs, abs(value))
            if ratio > worst[0]:
                worst = (ratio, env, value)
    ok = worst[0] <= tol
    return ZeroTest(is_zero=ok, max_abs=max_abs, max_ratio=worst[0], samples=accepted,
                    witness=None if ok else worst[1],
                    witness_value=None if ok else evaluate(e, worst[1]))
