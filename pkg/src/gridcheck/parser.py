"""Parser for the guarded-command CTMC modelling language.

Only the subset used by the bundled models is accepted: ``ctmc``, typed
constants, formulas, globals, modules of commands and reward blocks.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Optional

from .expr import (BOOL, INT, REAL, BinOp, Expr, ExprError, Ident, Lit, Neg,
                   Not, Value, eval_expr, free_names, inline_formulas,
                   lit_type, to_text, typecheck)


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        where = f"line {line}, column {col}: " if line else ""
        super().__init__(where + message)


# -- lexer ---------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<num>\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<string>"[^"\n]*")
  | (?P<op>->|\.\.|<=|>=|!=|=\?|≤|≥|[-+*/=<>&|!()\[\]{}:;',])
""", re.VERBOSE)

_UNICODE = {"≤": "<=", "≥": ">="}


@dataclass(frozen=True)
class Token:
    kind: str  # num, name, string, op, eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, _UNICODE.get(chunk, chunk), line, pos - line_start + 1))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class TokenStream:
    def __init__(self, tokens: list[Token], keywords: frozenset[str]):
        self.tokens = tokens
        self.keywords = keywords
        self.i = 0

    def peek(self, k: int = 0) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def at(self, text: str, k: int = 0) -> bool:
        tok = self.peek(k)
        return tok.text == text and tok.kind in ("op", "name")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        tok = self.peek()
        if not self.at(text):
            found = tok.text or "end of input"
            raise ParseError(f"expected '{text}' but found '{found}'", tok.line, tok.col)
        return self.next()

    def expect_name(self) -> Token:
        tok = self.peek()
        if tok.kind != "name" or tok.text in self.keywords:
            found = tok.text or "end of input"
            raise ParseError(f"expected an identifier but found '{found}'", tok.line, tok.col)
        return self.next()

    def error(self, message: str) -> ParseError:
        tok = self.peek()
        return ParseError(message, tok.line, tok.col)


# -- expressions ----------------------------------------------------------------

_REL = ("=", "!=", "<", "<=", ">", ">=")


class ExprParser:
    """Recursive descent over ``|`` < ``&`` < ``!`` < relations < ``+ -`` < ``* /`` < unary minus."""

    def __init__(self, ts: TokenStream):
        self.ts = ts

    def expr(self) -> Expr:
        return self.or_expr()

    def or_expr(self) -> Expr:
        node = self.and_expr()
        while self.ts.accept("|"):
            node = BinOp("|", node, self.and_expr())
        return node

    def and_expr(self) -> Expr:
        node = self.not_expr()
        while self.ts.at("&") and not self._update_follows(1):
            self.ts.next()
            node = BinOp("&", node, self.not_expr())
        return node

    def _update_follows(self, k: int) -> bool:
        # `& (x'=...)` inside an update list is not a conjunction
        ts = self.ts
        return ts.at("(", k) and ts.peek(k + 1).kind == "name" and ts.at("'", k + 2)

    def not_expr(self) -> Expr:
        if self.ts.accept("!"):
            return Not(self.not_expr())
        return self.rel_expr()

    def rel_expr(self) -> Expr:
        node = self.additive()
        tok = self.ts.peek()
        if tok.kind == "op" and tok.text in _REL:
            self.ts.next()
            node = BinOp(tok.text, node, self.additive())
            nxt = self.ts.peek()
            if nxt.kind == "op" and nxt.text in _REL:
                raise ParseError("relational operators cannot be chained", nxt.line, nxt.col)
        return node

    def additive(self) -> Expr:
        node = self.multiplicative()
        while self.ts.peek().kind == "op" and self.ts.peek().text in ("+", "-"):
            op = self.ts.next().text
            node = BinOp(op, node, self.multiplicative())
        return node

    def multiplicative(self) -> Expr:
        node = self.unary()
        while self.ts.peek().kind == "op" and self.ts.peek().text in ("*", "/"):
            op = self.ts.next().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.ts.accept("-"):
            return Neg(self.unary())
        if self.ts.accept("!"):
            return Not(self.unary())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.ts.peek()
        if tok.kind == "num":
            self.ts.next()
            if re.fullmatch(r"\d+", tok.text):
                return Lit(int(tok.text))
            return Lit(float(tok.text))
        if tok.kind == "name" and tok.text in ("true", "false"):
            self.ts.next()
            return Lit(tok.text == "true")
        if tok.kind == "name" and tok.text not in self.ts.keywords:
            self.ts.next()
            return Ident(tok.text)
        if self.ts.accept("("):
            node = self.expr()
            self.ts.expect(")")
            return node
        found = tok.text or "end of input"
        raise ParseError(f"expected an expression but found '{found}'", tok.line, tok.col)


# -- model IR -----------------------------------------------------------------------

@dataclass(frozen=True)
class ConstDecl:
    name: str
    type: str  # "int", "double" or "bool"
    value: Optional[Expr]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class VarDecl:
    name: str
    low: Optional[Expr]  # None for booleans
    high: Optional[Expr]
    init: Optional[Expr]
    scope: str  # "global" or the owning module's name
    line: int = field(default=0, compare=False)

    @property
    def is_bool(self) -> bool:
        return self.low is None


@dataclass(frozen=True)
class Command:
    label: Optional[str]
    guard: Expr
    rate: Expr
    updates: tuple[tuple[str, Expr], ...]  # empty tuple is the identity update
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Module:
    name: str
    variables: tuple[VarDecl, ...]
    commands: tuple[Command, ...]


@dataclass(frozen=True)
class RewardItem:
    guard: Expr
    value: Expr
    transition: bool = False
    label: Optional[str] = None  # only meaningful for transition items; None means `[]`
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class RewardStructure:
    name: str
    items: tuple[RewardItem, ...]

    @property
    def state_items(self) -> tuple[RewardItem, ...]:
        return tuple(it for it in self.items if not it.transition)

    @property
    def transition_items(self) -> tuple[RewardItem, ...]:
        return tuple(it for it in self.items if it.transition)


@dataclass(frozen=True)
class ModelIR:
    model_type: str
    constants: tuple[ConstDecl, ...]
    formulas: tuple[tuple[str, Expr], ...]
    globals: tuple[VarDecl, ...]
    modules: tuple[Module, ...]
    rewards: tuple[RewardStructure, ...]

    @property
    def formula_map(self) -> dict[str, Expr]:
        return dict(self.formulas)

    def constant_names(self) -> list[str]:
        return [c.name for c in self.constants]

    def all_variables(self) -> list[VarDecl]:
        out = list(self.globals)
        for m in self.modules:
            out.extend(m.variables)
        return out

    def action_labels(self) -> list[str]:
        seen: dict[str, None] = {}
        for m in self.modules:
            for c in m.commands:
                if c.label is not None:
                    seen.setdefault(c.label)
        return list(seen)

    def reward(self, name: str) -> RewardStructure:
        for r in self.rewards:
            if r.name == name:
                return r
        raise KeyError(f"unknown reward structure '{name}'")

    def constant_values(self) -> dict[str, Value]:
        return evaluate_constants(self)

    def var_types(self) -> dict[str, str]:
        """Type table for every constant, formula and variable."""
        types: dict[str, str] = {}
        for c in self.constants:
            types[c.name] = {"int": INT, "double": REAL, "bool": BOOL}[c.type]
        for v in self.all_variables():
            types[v.name] = BOOL if v.is_bool else INT
        for name, body in self.formulas:
            types[name] = typecheck(inline_formulas(body, self.formula_map), types)
        return types

    def with_overrides(self, overrides: Mapping[str, Value]) -> "ModelIR":
        return apply_overrides(self, overrides)


_MODEL_KEYWORDS = frozenset({
    "ctmc", "dtmc", "mdp", "const", "int", "double", "bool", "formula", "global",
    "module", "endmodule", "rewards", "endrewards", "init", "true", "false",
})


def coerce_constant(name: str, ctype: str, value: Value) -> Value:
    """Bring an override or evaluated value to the declared constant type."""
    if ctype == "bool":
        if not isinstance(value, bool):
            raise ParseError(f"constant '{name}' is bool but got {value!r}")
        return value
    if isinstance(value, bool):
        raise ParseError(f"constant '{name}' is {ctype} but got {value!r}")
    if ctype == "int":
        if isinstance(value, float):
            if not value.is_integer():
                raise ParseError(f"constant '{name}' is int but got {value!r}")
            return int(value)
        return value
    return float(value)


def parse_value(text: str) -> Value:
    """Lex a command-line override value as int, real or boolean."""
    t = text.strip()
    if t in ("true", "false"):
        return t == "true"
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        raise ParseError(f"cannot read value '{text}'") from None


class _ModelParser:
    def __init__(self, text: str):
        self.ts = TokenStream(tokenize(text), _MODEL_KEYWORDS)
        self.ep = ExprParser(self.ts)

    def parse(self) -> ModelIR:
        ts = self.ts
        model_type = None
        constants: list[ConstDecl] = []
        formulas: list[tuple[str, Expr]] = []
        globals_: list[VarDecl] = []
        modules: list[Module] = []
        rewards: list[RewardStructure] = []
        while ts.peek().kind != "eof":
            tok = ts.peek()
            if tok.text in ("ctmc", "dtmc", "mdp") and tok.kind == "name":
                if model_type is not None:
                    raise ParseError("model type declared twice", tok.line, tok.col)
                ts.next()
                if tok.text != "ctmc":
                    raise ParseError(f"only ctmc models are supported, got '{tok.text}'",
                                     tok.line, tok.col)
                model_type = "ctmc"
            elif ts.at("const"):
                constants.append(self.const_decl())
            elif ts.at("formula"):
                ts.next()
                name = ts.expect_name().text
                ts.expect("=")
                formulas.append((name, self.ep.expr()))
                ts.expect(";")
            elif ts.at("global"):
                ts.next()
                globals_.append(self.var_decl("global"))
            elif ts.at("module"):
                modules.append(self.module())
            elif ts.at("rewards"):
                rewards.append(self.reward_block())
            else:
                raise ts.error(f"unexpected '{tok.text}' at top level")
        if model_type is None:
            raise ParseError("missing model type keyword 'ctmc'", 1, 1)
        return ModelIR(model_type, tuple(constants), tuple(formulas), tuple(globals_),
                       tuple(modules), tuple(rewards))

    def const_decl(self) -> ConstDecl:
        ts = self.ts
        line = ts.expect("const").line
        ctype = "int"
        if ts.at("int") or ts.at("double") or ts.at("bool"):
            ctype = ts.next().text
        name = ts.expect_name().text
        value = None
        if ts.accept("="):
            value = self.ep.expr()
        ts.expect(";")
        return ConstDecl(name, ctype, value, line)

    def var_decl(self, scope: str) -> VarDecl:
        ts = self.ts
        tok = ts.expect_name()
        ts.expect(":")
        low = high = None
        if ts.accept("bool"):
            pass
        else:
            ts.expect("[")
            low = self.ep.expr()
            ts.expect("..")
            high = self.ep.expr()
            ts.expect("]")
        init = None
        if ts.accept("init"):
            init = self.ep.expr()
        ts.expect(";")
        return VarDecl(tok.text, low, high, init, scope, tok.line)

    def module(self) -> Module:
        ts = self.ts
        ts.expect("module")
        name = ts.expect_name().text
        variables: list[VarDecl] = []
        commands: list[Command] = []
        while not ts.at("endmodule"):
            if ts.peek().kind == "eof":
                raise ts.error(f"module '{name}' is missing 'endmodule'")
            if ts.at("["):
                commands.append(self.command())
            elif ts.peek().kind == "name" and ts.at(":", 1):
                variables.append(self.var_decl(name))
            else:
                commands.append(self.command())
        ts.expect("endmodule")
        return Module(name, tuple(variables), tuple(commands))

    def _label(self) -> Optional[str]:
        ts = self.ts
        ts.expect("[")
        label = None
        if not ts.at("]"):
            label = ts.expect_name().text
        ts.expect("]")
        return label

    def command(self) -> Command:
        ts = self.ts
        line = ts.peek().line
        label = self._label() if ts.at("[") else None
        guard = self.ep.expr()
        ts.expect("->")
        if self._updates_start():
            rate: Expr = Lit(1)
        else:
            rate = self.ep.expr()
            ts.expect(":")
        updates = self.updates()
        ts.expect(";")
        return Command(label, guard, rate, updates, line)

    def _updates_start(self) -> bool:
        ts = self.ts
        if ts.at("true") and ts.at(";", 1):
            return True
        return ts.at("(") and ts.peek(1).kind == "name" and ts.at("'", 2)

    def updates(self) -> tuple[tuple[str, Expr], ...]:
        ts = self.ts
        if ts.at("true") and ts.at(";", 1):
            ts.next()
            return ()
        out = [self.update()]
        while ts.accept("&"):
            out.append(self.update())
        return tuple(out)

    def update(self) -> tuple[str, Expr]:
        ts = self.ts
        ts.expect("(")
        name = ts.expect_name().text
        ts.expect("'")
        ts.expect("=")
        value = self.ep.expr()
        ts.expect(")")
        return name, value

    def reward_block(self) -> RewardStructure:
        ts = self.ts
        ts.expect("rewards")
        tok = ts.next()
        if tok.kind != "string":
            raise ParseError("expected a quoted reward name", tok.line, tok.col)
        items: list[RewardItem] = []
        while not ts.at("endrewards"):
            if ts.peek().kind == "eof":
                raise ts.error("reward block is missing 'endrewards'")
            line = ts.peek().line
            if ts.at("["):
                label = self._label()
                guard = self.ep.expr()
                ts.expect(":")
                value = self.ep.expr()
                items.append(RewardItem(guard, value, True, label, line))
            else:
                guard = self.ep.expr()
                ts.expect(":")
                value = self.ep.expr()
                items.append(RewardItem(guard, value, False, None, line))
            ts.expect(";")
        ts.expect("endrewards")
        return RewardStructure(tok.text[1:-1], tuple(items))


def apply_overrides(model: ModelIR, overrides: Mapping[str, Value]) -> ModelIR:
    declared = {c.name: c for c in model.constants}
    for name in overrides:
        if name not in declared:
            raise ParseError(f"override of undeclared constant '{name}'")
    constants = []
    for c in model.constants:
        if c.name in overrides:
            v = coerce_constant(c.name, c.type, overrides[c.name])
            c = replace(c, value=Lit(v))
        constants.append(c)
    return replace(model, constants=tuple(constants))


def parse_model(text: str, overrides: Optional[Mapping[str, Value]] = None,
                ignore_unknown: bool = False) -> ModelIR:
    """Parse model source; ``overrides`` replace declared constant values.

    Overrides naming undeclared constants are an error unless
    ``ignore_unknown`` is set, in which case they are skipped.
    """
    model = _ModelParser(text).parse()
    if overrides and ignore_unknown:
        declared = set(model.constant_names())
        overrides = {k: v for k, v in overrides.items() if k in declared}
    if overrides:
        model = apply_overrides(model, overrides)
    for c in model.constants:
        if c.value is None:
            raise ParseError(f"constant '{c.name}' has no value; supply it as an override",
                             c.line, 1)
    return model


def declared_constants(text: str) -> list[str]:
    """Names of the constants a model declares, valued or not."""
    return _ModelParser(text).parse().constant_names()


def evaluate_constants(model: ModelIR) -> dict[str, Value]:
    """Evaluate every constant, resolving references between them in any order."""
    decls = {c.name: c for c in model.constants}
    values: dict[str, Value] = {}

    def resolve(name: str, stack: tuple[str, ...]) -> Value:
        if name in values:
            return values[name]
        if name in stack:
            raise ParseError("cyclic constant definition: " + " -> ".join(stack + (name,)))
        c = decls[name]
        if c.value is None:
            raise ParseError(f"constant '{name}' has no value; supply it as an override")
        env = {}
        for dep in free_names(c.value):
            if dep not in decls:
                raise ParseError(f"constant '{name}' refers to '{dep}', which is not a constant")
            env[dep] = resolve(dep, stack + (name,))
        try:
            v = eval_expr(c.value, env)
        except ExprError as exc:
            raise ParseError(f"constant '{name}': {exc}", c.line, 1) from None
        if c.type == "int" and isinstance(v, float) and not isinstance(v, bool):
            raise ParseError(f"constant '{name}' is int but its value {v!r} is real", c.line, 1)
        values[name] = coerce_constant(name, c.type, v)
        return values[name]

    for c in model.constants:
        resolve(c.name, ())
    return values


# -- validation ----------------------------------------------------------------------

def _check(expr: Expr, types: Mapping[str, str], want: Optional[str], what: str,
           diags: list[str]) -> Optional[str]:
    try:
        t = typecheck(expr, types)
    except ExprError as exc:
        diags.append(f"{what}: {exc}")
        return None
    if want == BOOL and t != BOOL:
        diags.append(f"{what}: expected a boolean expression, got {t}")
    elif want == "num" and t == BOOL:
        diags.append(f"{what}: expected a numeric expression, got bool")
    return t


def validate(model: ModelIR) -> list[str]:
    """Return a list of human-readable diagnostics; empty means the model is sound."""
    diags: list[str] = []
    names: dict[str, str] = {}

    def claim(name: str, kind: str) -> None:
        if name in names:
            diags.append(f"name '{name}' declared as both {names[name]} and {kind}")
        else:
            names[name] = kind

    for c in model.constants:
        claim(c.name, "constant")
    for name, _ in model.formulas:
        claim(name, "formula")
    for v in model.globals:
        claim(v.name, "global variable")
    for m in model.modules:
        claim(m.name, "module")
        for v in m.variables:
            claim(v.name, f"variable of module {m.name}")

    try:
        types = model.var_types()
    except ExprError as exc:
        return diags + [f"formula: {exc}"]
    try:
        consts = evaluate_constants(model)
    except ParseError as exc:
        return diags + [str(exc)]

    owner = {v.name: v.scope for v in model.all_variables()}
    var_decls = {v.name: v for v in model.all_variables()}

    for v in model.all_variables():
        if not v.is_bool:
            for bound in (v.low, v.high):
                stray = free_names(bound) - set(consts)
                if stray:
                    diags.append(f"line {v.line}: range bound of '{v.name}' is not constant "
                                 f"(uses {', '.join(sorted(stray))})")
            if not (free_names(v.low) | free_names(v.high)) - set(consts):
                lo = eval_expr(v.low, consts)
                hi = eval_expr(v.high, consts)
                if not (isinstance(lo, int) and isinstance(hi, int)) or isinstance(lo, bool):
                    diags.append(f"line {v.line}: range of '{v.name}' must be integer")
                elif lo > hi:
                    diags.append(f"line {v.line}: empty range [{lo}..{hi}] for '{v.name}'")
                elif v.init is not None and not free_names(v.init) - set(consts):
                    init = eval_expr(v.init, consts)
                    if isinstance(init, bool) or not lo <= init <= hi:
                        diags.append(f"line {v.line}: initial value {init!r} of '{v.name}' "
                                     f"outside [{lo}..{hi}]")
        if v.init is not None:
            want = BOOL if v.is_bool else "num"
            _check(v.init, types, want, f"line {v.line}: init of '{v.name}'", diags)

    declared_labels = set(model.action_labels())
    for m in model.modules:
        for cmd in m.commands:
            where = f"line {cmd.line} (module {m.name})"
            _check(cmd.guard, types, BOOL, f"{where}: guard", diags)
            _check(cmd.rate, types, "num", f"{where}: rate", diags)
            seen: set[str] = set()
            for target, value in cmd.updates:
                if target not in var_decls:
                    diags.append(f"{where}: update of unknown variable '{target}'")
                    continue
                if target in seen:
                    diags.append(f"{where}: variable '{target}' updated twice")
                seen.add(target)
                scope = owner[target]
                if scope == "global":
                    if cmd.label is not None:
                        diags.append(f"{where}: global '{target}' written by labelled "
                                     f"command [{cmd.label}]")
                elif scope != m.name:
                    diags.append(f"{where}: module {m.name} writes '{target}' owned by "
                                 f"module {scope}")
                t = _check(value, types, None, f"{where}: update of '{target}'", diags)
                if t is None:
                    continue
                expect = BOOL if var_decls[target].is_bool else INT
                if t != expect:
                    diags.append(f"{where}: update of '{target}' has type {t}, "
                                 f"expected {expect}")

    for r in model.rewards:
        for it in r.items:
            where = f"line {it.line} (rewards \"{r.name}\")"
            _check(it.guard, types, BOOL, f"{where}: guard", diags)
            _check(it.value, types, "num", f"{where}: value", diags)
            if it.transition and it.label is not None and it.label not in declared_labels:
                diags.append(f"{where}: unknown action '{it.label}'")
    return diags


# -- printing -----------------------------------------------------------------------

def _decl_text(v: VarDecl) -> str:
    dom = "bool" if v.is_bool else f"[{to_text(v.low)}..{to_text(v.high)}]"
    init = "" if v.init is None else f" init {to_text(v.init)}"
    return f"{v.name} : {dom}{init};"


def _command_text(c: Command) -> str:
    label = f"[{c.label}]" if c.label is not None else "[]"
    if c.updates:
        upd = " & ".join(f"({n}'={to_text(e)})" for n, e in c.updates)
    else:
        upd = "true"
    return f"{label} {to_text(c.guard)} -> {to_text(c.rate)} : {upd};"


def _iter_lines(model: ModelIR) -> Iterator[str]:
    yield model.model_type
    yield ""
    for c in model.constants:
        value = "" if c.value is None else f"={to_text(c.value)}"
        yield f"const {c.type} {c.name}{value};"
    if model.formulas:
        yield ""
    for name, body in model.formulas:
        yield f"formula {name} = {to_text(body)};"
    if model.globals:
        yield ""
    for v in model.globals:
        yield "global " + _decl_text(v)
    for m in model.modules:
        yield ""
        yield f"module {m.name}"
        for v in m.variables:
            yield "    " + _decl_text(v)
        for c in m.commands:
            yield "    " + _command_text(c)
        yield "endmodule"
    for r in model.rewards:
        yield ""
        yield f'rewards "{r.name}"'
        for it in r.items:
            head = ""
            if it.transition:
                head = f"[{it.label}] " if it.label is not None else "[] "
            yield f"    {head}{to_text(it.guard)} : {to_text(it.value)};"
        yield "endrewards"


def model_to_text(model: ModelIR) -> str:
    """Pretty-print a model so that ``parse_model`` reproduces it."""
    return "\n".join(_iter_lines(model)) + "\n"
