"""Typed arithmetic/boolean expressions shared by models, rewards and properties.

Expressions are immutable trees.  Division always produces a real, so
``1/SLEEPTIME`` is a rate and never truncates to zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

Value = Union[int, float, bool]

INT, REAL, BOOL = "int", "real", "bool"

ARITH_OPS = ("+", "-", "*", "/")
REL_OPS = ("=", "!=", "<", "<=", ">", ">=")
BOOL_OPS = ("&", "|")

# binding strength used by the printer; mirrors the parser
_PREC = {"|": 1, "&": 2, "=": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
         "+": 5, "-": 5, "*": 6, "/": 6}


class ExprError(Exception):
    """Raised for unbound identifiers, type errors and bad arithmetic."""


class Expr:
    __slots__ = ()

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Lit(Expr):
    value: Value


@dataclass(frozen=True)
class Ident(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class Not(Expr):
    operand: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


TRUE = Lit(True)
FALSE = Lit(False)


def lit_type(value: Value) -> str:
    if isinstance(value, bool):
        return BOOL
    if isinstance(value, int):
        return INT
    return REAL


def _num(value: Value, node: Expr) -> Union[int, float]:
    if isinstance(value, bool):
        raise ExprError(f"type mismatch: expected a number in '{node}'")
    return value


def _bool(value: Value, node: Expr) -> bool:
    if not isinstance(value, bool):
        raise ExprError(f"type mismatch: expected a boolean in '{node}'")
    return value


def eval_expr(expr: Expr, env: Mapping[str, Value]) -> Value:
    """Evaluate ``expr`` with identifiers looked up in ``env``."""
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, Ident):
        try:
            return env[expr.name]
        except KeyError:
            raise ExprError(f"unbound identifier '{expr.name}'") from None
    if isinstance(expr, Neg):
        return -_num(eval_expr(expr.operand, env), expr)
    if isinstance(expr, Not):
        return not _bool(eval_expr(expr.operand, env), expr)
    op = expr.op
    if op in BOOL_OPS:
        left = _bool(eval_expr(expr.left, env), expr)
        right = _bool(eval_expr(expr.right, env), expr)
        return (left and right) if op == "&" else (left or right)
    a = eval_expr(expr.left, env)
    b = eval_expr(expr.right, env)
    if op in ("=", "!="):
        if isinstance(a, bool) != isinstance(b, bool):
            raise ExprError(f"type mismatch: cannot compare '{expr}'")
        same = a == b if isinstance(a, bool) else float(a) == float(b)
        return same if op == "=" else not same
    a = _num(a, expr)
    b = _num(b, expr)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0:
            raise ExprError(f"division by zero in '{expr}'")
        return float(a) / float(b)
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise ExprError(f"unknown operator '{op}'")


def typecheck(expr: Expr, types: Mapping[str, str], _path: str = "") -> str:
    """Return ``"int"``, ``"real"`` or ``"bool"``; raise ExprError with a node path."""
    where = "root" + _path
    if isinstance(expr, Lit):
        return lit_type(expr.value)
    if isinstance(expr, Ident):
        if expr.name not in types:
            raise ExprError(f"unbound identifier '{expr.name}' at {where}")
        return types[expr.name]
    if isinstance(expr, Neg):
        t = typecheck(expr.operand, types, _path + "/neg")
        if t == BOOL:
            raise ExprError(f"type error at {where}: cannot negate boolean '{expr.operand}'")
        return t
    if isinstance(expr, Not):
        t = typecheck(expr.operand, types, _path + "/not")
        if t != BOOL:
            raise ExprError(f"type error at {where}: '!' needs a boolean, got {t}")
        return BOOL
    lt = typecheck(expr.left, types, _path + "/left")
    rt = typecheck(expr.right, types, _path + "/right")
    op = expr.op

    def culprit(bad_left: bool) -> str:
        return where + ("/left" if bad_left else "/right")

    if op in BOOL_OPS:
        if lt != BOOL or rt != BOOL:
            raise ExprError(f"type error at {culprit(lt != BOOL)}: '{op}' needs booleans "
                            f"in '{expr}'")
        return BOOL
    if op in ("=", "!="):
        if (lt == BOOL) != (rt == BOOL):
            raise ExprError(f"type error at {where}: cannot compare {lt} with {rt} in '{expr}'")
        return BOOL
    if lt == BOOL or rt == BOOL:
        raise ExprError(f"type error at {culprit(lt == BOOL)}: '{op}' needs numbers "
                        f"in '{expr}'")
    if op in REL_OPS:
        return BOOL
    if op == "/":
        return REAL
    return INT if lt == rt == INT else REAL


def free_names(expr: Expr) -> set[str]:
    if isinstance(expr, Ident):
        return {expr.name}
    if isinstance(expr, Lit):
        return set()
    if isinstance(expr, (Neg, Not)):
        return free_names(expr.operand)
    return free_names(expr.left) | free_names(expr.right)


def substitute(expr: Expr, mapping: Mapping[str, Expr]) -> Expr:
    if isinstance(expr, Ident):
        return mapping.get(expr.name, expr)
    if isinstance(expr, Lit):
        return expr
    if isinstance(expr, Neg):
        return Neg(substitute(expr.operand, mapping))
    if isinstance(expr, Not):
        return Not(substitute(expr.operand, mapping))
    return BinOp(expr.op, substitute(expr.left, mapping), substitute(expr.right, mapping))


def inline_formulas(expr: Expr, formulas: Mapping[str, Expr]) -> Expr:
    """Replace formula identifiers by their (recursively inlined) bodies."""
    cache: dict[str, Expr] = {}

    def expand(name: str, stack: tuple[str, ...]) -> Expr:
        if name in stack:
            cycle = " -> ".join(stack + (name,))
            raise ExprError(f"cyclic formula definition: {cycle}")
        if name not in cache:
            cache[name] = walk(formulas[name], stack + (name,))
        return cache[name]

    def walk(e: Expr, stack: tuple[str, ...]) -> Expr:
        if isinstance(e, Ident):
            return expand(e.name, stack) if e.name in formulas else e
        if isinstance(e, Lit):
            return e
        if isinstance(e, Neg):
            return Neg(walk(e.operand, stack))
        if isinstance(e, Not):
            return Not(walk(e.operand, stack))
        return BinOp(e.op, walk(e.left, stack), walk(e.right, stack))

    return walk(expr, ())


def fold_constants(expr: Expr, consts: Mapping[str, Value],
                   formulas: Mapping[str, Expr] | None = None) -> Expr:
    """Inline formulas, substitute constants and collapse closed subtrees.

    The result mentions only identifiers absent from ``consts`` (state
    variables in practice).
    """
    if formulas:
        expr = inline_formulas(expr, formulas)

    def walk(e: Expr) -> Expr:
        if isinstance(e, Lit):
            return e
        if isinstance(e, Ident):
            return Lit(consts[e.name]) if e.name in consts else e
        if isinstance(e, (Neg, Not)):
            inner = walk(e.operand)
            node = type(e)(inner)
            return Lit(eval_expr(node, {})) if isinstance(inner, Lit) else node
        left, right = walk(e.left), walk(e.right)
        node = BinOp(e.op, left, right)
        if isinstance(left, Lit) and isinstance(right, Lit):
            return Lit(eval_expr(node, {}))
        return node

    return walk(expr)


# -- printing ---------------------------------------------------------------

def _fmt_lit(value: Value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    text = repr(float(value))
    if text in ("inf", "-inf", "nan"):
        raise ExprError(f"cannot print non-finite literal {text}")
    return text


def to_text(expr: Expr, parent: int = 0) -> str:
    """Render in the modelling-language syntax with minimal parentheses."""
    if isinstance(expr, Lit):
        text = _fmt_lit(expr.value)
        return f"({text})" if text.startswith("-") and parent else text
    if isinstance(expr, Ident):
        return expr.name
    if isinstance(expr, Neg):
        return f"-{to_text(expr.operand, 7)}"
    if isinstance(expr, Not):
        # `!` sits between `&` and the relations, so `!a=b` means `!(a=b)`
        text = f"!{to_text(expr.operand, 7)}"
        return f"({text})" if parent >= 4 else text
    prec = _PREC[expr.op]
    # left-associative: the right child needs parentheses at equal precedence
    text = f"{to_text(expr.left, prec)}{expr.op}{to_text(expr.right, prec + 1)}"
    if expr.op in REL_OPS:
        # relational operators do not chain
        text = f"{to_text(expr.left, prec + 1)}{expr.op}{to_text(expr.right, prec + 1)}"
    return f"({text})" if prec < parent else text


# -- vectorised evaluation ----------------------------------------------------

_NP_OPS = {"+": "+", "-": "-", "*": "*", "=": "==", "!=": "!=", "<": "<",
           "<=": "<=", ">": ">", ">=": ">=", "&": "&", "|": "|"}


def _np_source(expr: Expr, columns: Mapping[str, int]) -> str:
    if isinstance(expr, Lit):
        v = expr.value
        if isinstance(v, bool):
            return "True" if v else "False"
        return repr(v)
    if isinstance(expr, Ident):
        if expr.name not in columns:
            raise ExprError(f"unbound identifier '{expr.name}'")
        return f"X[:,{columns[expr.name]}]"
    if isinstance(expr, Neg):
        return f"(-{_np_source(expr.operand, columns)})"
    if isinstance(expr, Not):
        return f"(~_asbool({_np_source(expr.operand, columns)}))"
    a = _np_source(expr.left, columns)
    b = _np_source(expr.right, columns)
    if expr.op == "/":
        return f"_div({a},{b})"
    if expr.op in BOOL_OPS:
        return f"(_asbool({a}){_NP_OPS[expr.op]}_asbool({b}))"
    return f"({a}{_NP_OPS[expr.op]}{b})"


def _div(a, b):
    b = np.asarray(b, dtype=float)
    if np.any(b == 0):
        raise ExprError("division by zero")
    return np.true_divide(a, b)


def _asbool(a):
    return np.asarray(a, dtype=bool)


def compile_vector(expr: Expr, columns: Mapping[str, int],
                   dtype=None) -> Callable[[np.ndarray], np.ndarray]:
    """Compile ``expr`` to ``f(X) -> array`` evaluating it row-wise over ``X``.

    ``X`` is an integer matrix with one column per state variable (booleans
    encoded as 0/1).  Boolean-typed variables must be listed in ``columns``
    with the same index; the caller handles the 0/1 encoding by comparing.
    """
    source = _np_source(expr, columns)
    code = compile(f"lambda X: {source}", "<expr>", "eval")
    raw = eval(code, {"_div": _div, "_asbool": _asbool, "True": True, "False": False})

    def fn(X: np.ndarray) -> np.ndarray:
        out = np.asarray(raw(X))
        if out.ndim == 0:
            out = np.full(X.shape[0], out.item())
        return out if dtype is None else out.astype(dtype, copy=False)

    fn.source = source  # type: ignore[attr-defined]
    return fn
