"""Scalar real expression kernel: parse, evaluate, differentiate, simplify, zero-test."""

from .core import (FUNCTIONS, ONE, ZERO, Apply, Constant, Env, Expr, Kind, Neg, Power,
                   Product, Quotient, Sum, T, Var, VarId, add, additive_terms, apply,
                   as_expr, compile_expr, compile_exprs, control, control_dot, cos,
                   costate, evaluate, exp, free_of, ln, mul, neg, power, quotient, sin,
                   sqrt, state, state_dot, substitute, to_string, variables)
from .calculus import diff, expand_constant, is_identically_zero, simplify
from .parse import parse
from .sampling import (DEFAULT_SEED, SamplingBox, ZeroTest, is_zero, sample_envs)

__all__ = [
    "FUNCTIONS", "ONE", "ZERO", "Apply", "Constant", "Env", "Expr", "Kind", "Neg",
    "Power", "Product", "Quotient", "Sum", "T", "Var", "VarId", "add",
    "additive_terms", "apply", "as_expr", "compile_expr", "compile_exprs", "control",
    "control_dot", "cos", "costate", "evaluate", "exp", "free_of", "ln", "mul", "neg",
    "power", "quotient", "sin", "sqrt", "state", "state_dot", "substitute",
    "to_string", "variables", "diff", "expand_constant", "is_identically_zero",
    "simplify", "parse", "DEFAULT_SEED", "SamplingBox", "ZeroTest", "is_zero",
    "sample_envs",
]
