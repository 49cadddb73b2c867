"""The six query shapes: bounded F/G/U, steady-state probability, and
cumulative or long-run reward."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .expr import (BOOL, Expr, ExprError, fold_constants, free_names, lit_type, to_text,
                   typecheck)
from .numerics import (SolverOptions, Stats, bounded_globally, bounded_reachability,
                       bounded_until, cumulative_expected_reward, long_run_expected_reward,
                       steady_state_probability)
from .parser import (ExprParser, ModelIR, ParseError, TokenStream, Value, coerce_constant,
                     tokenize)
from .statespace import StateSpace

BOUNDED_F, BOUNDED_G, BOUNDED_U = "BoundedF", "BoundedG", "BoundedU"
STEADY_PROB, CUMUL_REWARD, STEADY_REWARD = "SteadyProb", "CumulReward", "SteadyReward"
PROBABILITY_KINDS = (BOUNDED_F, BOUNDED_G, BOUNDED_U, STEADY_PROB)

_KEYWORDS = frozenset({"P", "S", "R", "F", "G", "U", "C", "true", "false"})


class PropertyError(Exception):
    pass


@dataclass(frozen=True)
class Property:
    kind: str
    text: str
    bound: Optional[float] = None
    bound_expr: Optional[Expr] = None
    reward: Optional[str] = None
    phi1: Optional[Expr] = None  # constants folded in
    phi2: Optional[Expr] = None
    name: Optional[str] = None

    @property
    def is_probability(self) -> bool:
        return self.kind in PROBABILITY_KINDS

    @property
    def is_steady(self) -> bool:
        return self.kind in (STEADY_PROB, STEADY_REWARD)


@dataclass
class QueryResult:
    value: float
    method: str
    iterations: int
    seconds: float
    detail: dict = field(default_factory=dict)


class _PropParser:
    def __init__(self, text: str):
        try:
            tokens = tokenize(text)
        except ParseError as exc:
            raise PropertyError(str(exc)) from None
        self.ts = TokenStream(tokens, _KEYWORDS)
        self.ep = ExprParser(self.ts)

    def parse(self):
        ts = self.ts
        tok = ts.peek()
        if ts.accept("P"):
            ts.expect("=?")
            ts.expect("[")
            if ts.accept("F"):
                bound = self._bound()
                out = (BOUNDED_F, bound, None, None, self.ep.expr())
            elif ts.accept("G"):
                bound = self._bound()
                out = (BOUNDED_G, bound, None, None, self.ep.expr())
            else:
                phi1 = self.ep.expr()
                ts.expect("U")
                bound = self._bound()
                out = (BOUNDED_U, bound, None, phi1, self.ep.expr())
        elif ts.accept("S"):
            ts.expect("=?")
            ts.expect("[")
            out = (STEADY_PROB, None, None, None, self.ep.expr())
        elif ts.accept("R"):
            ts.expect("{")
            name = ts.next()
            if name.kind != "string":
                raise ParseError("expected a quoted reward name", name.line, name.col)
            ts.expect("}")
            ts.expect("=?")
            ts.expect("[")
            if ts.accept("C"):
                out = (CUMUL_REWARD, self._bound(), name.text[1:-1], None, None)
            else:
                ts.expect("S")
                out = (STEADY_REWARD, None, name.text[1:-1], None, None)
        else:
            raise ParseError(f"expected P=?, S=? or R{{...}}=? but found '{tok.text}'",
                             tok.line, tok.col)
        ts.expect("]")
        if ts.peek().kind != "eof":
            raise ts.error(f"unexpected '{ts.peek().text}' after property")
        return out

    def _bound(self) -> Expr:
        self.ts.expect("<=")
        # arithmetic only, so that `F<=T failure=1` stops before the predicate
        return self.ep.additive()


def parse_property(text: str, model: ModelIR, constants: Optional[Mapping[str, Value]] = None,
                   name: Optional[str] = None) -> Property:
    """Parse one query against ``model``.

    ``constants`` supplies values for names the query uses but the model does
    not declare (``T`` in ``F<=T``) and may also shadow model constants.
    """
    try:
        kind, bound_expr, reward, phi1, phi2 = _PropParser(text).parse()
    except ParseError as exc:
        raise PropertyError(f"{exc} in property: {text.strip()}") from None
    consts = dict(model.constant_values())
    if constants:
        consts.update(constants)
    types = model.var_types()
    for k, v in consts.items():
        if k not in types:
            types[k] = lit_type(v)
    formulas = model.formula_map

    bound = None
    if bound_expr is not None:
        missing = free_names(bound_expr) - set(consts)
        if missing:
            raise PropertyError(f"undefined constant {', '.join(sorted(missing))} in time bound; "
                                f"supply it with --const")
        try:
            b = fold_constants(bound_expr, consts).value
        except ExprError as exc:
            raise PropertyError(f"time bound: {exc}") from None
        if isinstance(b, bool) or b < 0:
            raise PropertyError(f"time bound must be a nonnegative number, got {b!r}")
        bound = float(b)
    if reward is not None and reward not in [r.name for r in model.rewards]:
        raise PropertyError(f"unknown reward structure '{reward}'")

    def predicate(e: Optional[Expr]) -> Optional[Expr]:
        if e is None:
            return None
        variables = {v.name for v in model.all_variables()}
        missing = free_names(e) - set(types) - variables
        if missing:
            raise PropertyError(f"undefined identifier {', '.join(sorted(missing))} in "
                                f"predicate '{to_text(e)}'")
        try:
            t = typecheck(e, types)
        except ExprError as exc:
            raise PropertyError(f"predicate '{to_text(e)}': {exc}") from None
        if t != BOOL:
            raise PropertyError(f"predicate '{to_text(e)}' is not boolean")
        return fold_constants(e, consts, formulas)

    return Property(kind, text.strip(), bound, bound_expr, reward, predicate(phi1),
                    predicate(phi2), name)


def parse_property_file(text: str, model: ModelIR,
                        constants: Optional[Mapping[str, Value]] = None) -> list[Property]:
    """One query per line; ``//`` comments, blank lines and ``const`` lines allowed.

    A line may start with ``"name":`` to label the query.  ``const`` lines
    declare query constants (``const double T;`` or ``const int T1=7;``);
    values passed in ``constants`` win over declared ones.
    """
    consts: dict[str, Value] = {}
    declared: dict[str, str] = {}
    props = []
    const_lines, pending = split_property_file(text)
    for lineno, line in const_lines:
        name, ctype, value = _const_line(line, lineno, {**model.constant_values(), **consts})
        declared[name] = ctype
        if value is not None:
            consts[name] = value
    for name, value in (constants or {}).items():
        consts[name] = coerce_constant(name, declared[name], value) if name in declared else value
    for lineno, label, line in pending:
        try:
            props.append(parse_property(line, model, consts, label))
        except PropertyError as exc:
            raise PropertyError(f"line {lineno}: {exc}") from None
    return props


def split_property_file(text: str):
    """Split a property file into ``const`` lines and (line, name, query) entries."""
    const_lines, queries = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("//", 1)[0].strip()
        if not line:
            continue
        if line.startswith("const "):
            const_lines.append((lineno, line))
            continue
        label = None
        if line.startswith('"'):
            end = line.find('"', 1)
            if end < 0 or not line[end + 1:].lstrip().startswith(":"):
                raise PropertyError(f"line {lineno}: malformed property name")
            label = line[1:end]
            line = line[end + 1:].lstrip()[1:].strip()
        queries.append((lineno, label, line))
    return const_lines, queries


def declared_query_constants(text: str) -> list[str]:
    names = []
    for lineno, line in split_property_file(text)[0]:
        m = TokenStream(tokenize(line), frozenset({"const", "int", "double", "bool"}))
        m.expect("const")
        if m.at("int") or m.at("double") or m.at("bool"):
            m.next()
        names.append(m.expect_name().text)
    return names


def _const_line(line: str, lineno: int, env: Mapping[str, Value]):
    ts = TokenStream(tokenize(line), frozenset({"const", "int", "double", "bool"}))
    ep = ExprParser(ts)
    try:
        ts.expect("const")
        ctype = "int"
        if ts.at("int") or ts.at("double") or ts.at("bool"):
            ctype = ts.next().text
        name = ts.expect_name().text
        value = None
        if ts.accept("="):
            e = ep.expr()
            value = coerce_constant(name, ctype, fold_constants(e, env).value)
        ts.expect(";")
    except (ParseError, ExprError, AttributeError) as exc:
        raise PropertyError(f"line {lineno}: {exc}") from None
    return name, ctype, value


def evaluate(space: StateSpace, prop: Property, opts: SolverOptions = SolverOptions()
             ) -> QueryResult:
    """Compute the value of ``prop`` on ``space``."""
    stats = Stats()
    start = time.perf_counter()
    method = "uniformization"
    if prop.kind == BOUNDED_F:
        value = bounded_reachability(space, space.satisfying(prop.phi2), prop.bound, opts, stats)
    elif prop.kind == BOUNDED_G:
        value = bounded_globally(space, space.satisfying(prop.phi2), prop.bound, opts, stats)
    elif prop.kind == BOUNDED_U:
        value = bounded_until(space, space.satisfying(prop.phi1), space.satisfying(prop.phi2),
                              prop.bound, opts, stats)
    elif prop.kind == CUMUL_REWARD:
        value = cumulative_expected_reward(space, prop.reward, prop.bound, opts, stats)
    elif prop.kind == STEADY_PROB:
        method = opts.method
        value = steady_state_probability(space, space.satisfying(prop.phi2), opts, stats)
    else:
        method = opts.method
        value = long_run_expected_reward(space, prop.reward, opts, stats)
    return QueryResult(float(value), method, stats.iterations, time.perf_counter() - start,
                       {"left": stats.left, "right": stats.right,
                        "rate": stats.uniformization_rate})
