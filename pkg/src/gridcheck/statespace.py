"""Explicit CTMC construction from a parsed model.

States are explored breadth first.  Every frontier is handled as one integer
matrix so guards, rates and updates are evaluated with numpy rather than per
state, which keeps the 590k-state transmission-line model within minutes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, TextIO

import numpy as np
import scipy.sparse as sp

from .expr import Expr, ExprError, compile_vector, fold_constants
from .parser import Command, ModelIR, ParseError, validate


class BuildError(Exception):
    pass


DEFAULT_STATE_CAP = 10**7


@dataclass(frozen=True)
class Variable:
    name: str
    low: int
    high: int
    is_bool: bool
    init: int


@dataclass
class _CompiledCommand:
    module: int
    label: Optional[str]
    guard: object
    rate: object
    updates: list  # (column, fn)
    source: Command
    module_name: str


@dataclass
class StateSpace:
    """Reachable states plus the merged transition list of a CTMC.

    ``labels[0]`` is ``None`` and stands for unlabelled transitions; the
    ``label`` array holds indices into ``labels``.
    """

    model: ModelIR
    constants: dict
    variables: list[Variable]
    states: np.ndarray  # (n_states, n_vars) int64
    src: np.ndarray
    dst: np.ndarray
    rate: np.ndarray
    label: np.ndarray
    labels: list
    initial: int = 0
    _reward_cache: dict = field(default_factory=dict, repr=False)
    _steady_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    @property
    def n_transitions(self) -> int:
        return self.src.shape[0]

    @cached_property
    def columns(self) -> dict[str, int]:
        return {v.name: i for i, v in enumerate(self.variables)}

    @cached_property
    def rate_matrix(self) -> sp.csr_matrix:
        """R(s, s') with parallel labels summed and self-loops on the diagonal."""
        n = self.n_states
        R = sp.csr_matrix((self.rate, (self.src, self.dst)), shape=(n, n))
        R.sum_duplicates()
        return R

    @cached_property
    def exit_rates(self) -> np.ndarray:
        return np.bincount(self.src, weights=self.rate, minlength=self.n_states)

    @cached_property
    def self_loop_rates(self) -> np.ndarray:
        loop = self.src == self.dst
        return np.bincount(self.src[loop], weights=self.rate[loop], minlength=self.n_states)

    @cached_property
    def generator(self) -> sp.csr_matrix:
        """Q = R - diag(E); self-loops cancel on the diagonal."""
        R = self.rate_matrix
        Q = R - sp.diags(self.exit_rates)
        Q = sp.csr_matrix(Q)
        Q.eliminate_zeros()
        return Q

    def embedded_matrix(self) -> sp.csr_matrix:
        """P(s, s') = R(s, s')/E(s); absorbing states get P(s, s) = 1."""
        E = self.exit_rates
        absorbing = E == 0
        inv = np.where(absorbing, 0.0, 1.0 / np.where(absorbing, 1.0, E))
        P = sp.diags(inv) @ self.rate_matrix
        P = P + sp.diags(absorbing.astype(float))
        return sp.csr_matrix(P)

    # -- predicates and rewards ------------------------------------------------------

    def compile(self, expr: Expr, extra_consts: Optional[dict] = None, dtype=None):
        consts = dict(self.constants)
        if extra_consts:
            consts.update(extra_consts)
        folded = fold_constants(expr, consts, self.model.formula_map)
        return compile_vector(folded, self.columns, dtype)

    def evaluate(self, expr: Expr, extra_consts: Optional[dict] = None, dtype=None) -> np.ndarray:
        """Evaluate ``expr`` on every state."""
        return self.compile(expr, extra_consts, dtype)(self.states)

    def satisfying(self, expr: Expr, extra_consts: Optional[dict] = None) -> np.ndarray:
        return self.evaluate(expr, extra_consts, bool)

    def reward_names(self) -> list[str]:
        return [r.name for r in self.model.rewards]

    def _reward_parts(self, name: str):
        if name in self._reward_cache:
            return self._reward_cache[name]
        try:
            structure = self.model.reward(name)
        except KeyError:
            raise KeyError(f"unknown reward structure '{name}'") from None
        n = self.n_states
        state_reward = np.zeros(n)
        for it in structure.state_items:
            guard = self.satisfying(it.guard)
            value = self.evaluate(it.value, dtype=float)
            state_reward += np.where(guard, value, 0.0)
        # impulse per (state, label index); only labels that carry items are stored
        label_index = {lab: i for i, lab in enumerate(self.labels)}
        impulses: dict[int, np.ndarray] = {}
        for it in structure.transition_items:
            li = label_index.get(it.label)
            if li is None:
                continue  # action never fires in this space
            guard = self.satisfying(it.guard)
            value = self.evaluate(it.value, dtype=float)
            impulses.setdefault(li, np.zeros(n))
            impulses[li] += np.where(guard, value, 0.0)
        parts = (state_reward, impulses)
        self._reward_cache[name] = parts
        return parts

    def state_reward_vector(self, name: str) -> np.ndarray:
        return self._reward_parts(name)[0]

    def transition_impulses(self, name: str) -> np.ndarray:
        """Impulse attached to each entry of the transition list."""
        _, impulses = self._reward_parts(name)
        out = np.zeros(self.n_transitions)
        for li, per_state in impulses.items():
            mask = self.label == li
            out[mask] = per_state[self.src[mask]]
        return out

    def reward_rate_vector(self, name: str) -> np.ndarray:
        """Expected reward accrual rate per state, impulses converted to rates."""
        state_reward, _ = self._reward_parts(name)
        imp = self.transition_impulses(name)
        flow = np.bincount(self.src, weights=self.rate * imp, minlength=self.n_states)
        return state_reward + flow

    # -- inspection ------------------------------------------------------------------

    def valuation(self, index: int) -> dict:
        row = self.states[index]
        return {v.name: (bool(x) if v.is_bool else int(x)) for v, x in zip(self.variables, row)}

    def format_state(self, index: int) -> str:
        return " ".join(f"{k}={str(v).lower() if isinstance(v, bool) else v}"
                        for k, v in self.valuation(index).items())

    def label_name(self, li: int) -> str:
        lab = self.labels[li]
        return "" if lab is None else lab

    def write_transitions(self, out: TextIO) -> None:
        for s, d, r, li in zip(self.src.tolist(), self.dst.tolist(), self.rate.tolist(),
                               self.label.tolist()):
            lab = self.labels[li]
            out.write(f"{s} {d} {r!r}" + (f" {lab}" if lab is not None else "") + "\n")

    def write_states(self, out: TextIO) -> None:
        for i in range(self.n_states):
            out.write(f"{i} {self.format_state(i)}\n")


# -- building --------------------------------------------------------------------------

def _layout(model: ModelIR, consts: dict) -> list[Variable]:
    out = []
    for v in model.all_variables():
        if v.is_bool:
            lo, hi = 0, 1
            init = False if v.init is None else fold_constants(v.init, consts).value
        else:
            lo = fold_constants(v.low, consts).value
            hi = fold_constants(v.high, consts).value
            init = lo if v.init is None else fold_constants(v.init, consts).value
        out.append(Variable(v.name, int(lo), int(hi), v.is_bool, int(init)))
    return out


def _compile_commands(model: ModelIR, consts: dict, columns: dict) -> list[_CompiledCommand]:
    formulas = model.formula_map
    out = []
    for mi, m in enumerate(model.modules):
        for cmd in m.commands:
            def comp(e, dtype=None):
                return compile_vector(fold_constants(e, consts, formulas), columns, dtype)
            updates = [(columns[name], comp(e)) for name, e in cmd.updates]
            out.append(_CompiledCommand(mi, cmd.label, comp(cmd.guard, bool),
                                        comp(cmd.rate, float), updates, cmd, m.name))
    return out


class _Generator:
    """One source of transitions: a lone unlabelled command or a synchronised action."""

    def __init__(self, label: Optional[str], groups: list[list[_CompiledCommand]]):
        self.label = label
        self.groups = groups  # one list of commands per participating module

    def fire(self, X: np.ndarray):
        """Yield (rows, rates, participating commands) for every enabled combination."""
        n = X.shape[0]
        enabled = [[c.guard(X) for c in group] for group in self.groups]
        rates = [[None] * len(group) for group in self.groups]

        def rate_of(g, k, rows):
            if rates[g][k] is None:
                rates[g][k] = self.groups[g][k].rate(X)
            return rates[g][k][rows]

        def walk(g, rows, rate, chosen):
            if g == len(self.groups):
                yield rows, rate, chosen
                return
            for k, cmd in enumerate(self.groups[g]):
                sub = rows[enabled[g][k][rows]]
                if sub.size == 0:
                    continue
                keep = np.searchsorted(rows, sub)
                yield from walk(g + 1, sub, rate[keep] * rate_of(g, k, sub), chosen + [cmd])

        yield from walk(0, np.arange(n), np.ones(n), [])


def _generators(commands: list[_CompiledCommand]) -> list[_Generator]:
    gens: list[_Generator] = []
    by_label: dict[str, dict[int, list[_CompiledCommand]]] = {}
    for c in commands:
        if c.label is not None:
            by_label.setdefault(c.label, {}).setdefault(c.module, []).append(c)
    placed: set[str] = set()
    for c in commands:
        if c.label is None:
            gens.append(_Generator(None, [[c]]))
        elif c.label not in placed:
            placed.add(c.label)
            per_module = by_label[c.label]
            gens.append(_Generator(c.label, [per_module[m] for m in sorted(per_module)]))
    return gens


def build(model: ModelIR, state_cap: int = DEFAULT_STATE_CAP,
          check: bool = True) -> StateSpace:
    """Explore the reachable state space of ``model``."""
    if check:
        diags = validate(model)
        if diags:
            raise BuildError("model has validation errors:\n  " + "\n  ".join(diags))
    try:
        consts = model.constant_values()
    except ParseError as exc:
        raise BuildError(str(exc)) from None
    variables = _layout(model, consts)
    columns = {v.name: i for i, v in enumerate(variables)}
    commands = _compile_commands(model, consts, columns)
    gens = _generators(commands)
    labels: list = [None] + model.action_labels()
    label_id = {lab: i for i, lab in enumerate(labels)}

    lows = np.array([v.low for v in variables], dtype=np.int64)
    highs = np.array([v.high for v in variables], dtype=np.int64)
    radix = highs - lows + 1
    if float(np.prod(radix.astype(float))) >= 2.0**62:
        raise BuildError("variable domains too large for state encoding")
    mult = np.ones(len(variables), dtype=np.int64)
    for i in range(len(variables) - 2, -1, -1):
        mult[i] = mult[i + 1] * radix[i + 1]

    def encode(X):
        return (X - lows) @ mult

    init = np.array([[v.init for v in variables]], dtype=np.int64)
    if np.any(init < lows) or np.any(init > highs):
        raise BuildError("initial state outside variable domains")

    state_blocks = [init]
    key_blocks = [encode(init)]
    known_keys = key_blocks[0].copy()  # sorted
    known_idx = np.zeros(1, dtype=np.int64)
    n_states = 1
    frontier = init
    frontier_start = 0
    t_src, t_key, t_rate, t_label = [], [], [], []

    with np.errstate(all="ignore"):
        while frontier.shape[0]:
            srcs, keys, rates, labs, dests = [], [], [], [], []
            for order, gen in enumerate(gens):
                for rows, rate, chosen in gen.fire(frontier):
                    ok = rate > 0
                    if not np.all(np.isfinite(rate)) or np.any(rate < 0):
                        bad = rows[~(np.isfinite(rate) & (rate >= 0))][0]
                        raise BuildError(
                            f"invalid rate in state ({_fmt(variables, frontier[bad])}) "
                            f"for action [{gen.label or ''}]")
                    if not np.all(ok):
                        rows, rate = rows[ok], rate[ok]
                        if rows.size == 0:
                            continue
                    Xs = frontier[rows]
                    Y = Xs.copy()
                    written: dict[int, _CompiledCommand] = {}
                    for cmd in chosen:
                        for col, fn in cmd.updates:
                            if col in written:
                                raise BuildError(
                                    f"conflicting writes to '{variables[col].name}' by "
                                    f"modules {written[col].module_name} and "
                                    f"{cmd.module_name} on action [{gen.label}]")
                            written[col] = cmd
                            vals = np.asarray(fn(Xs))
                            if vals.dtype.kind == "f":
                                raise BuildError(
                                    f"non-integer update of '{variables[col].name}' "
                                    f"(line {cmd.source.line})")
                            Y[:, col] = vals
                    out = (Y < lows) | (Y > highs)
                    if out.any():
                        r, c = np.argwhere(out)[0]
                        cmd = written.get(c, chosen[0])
                        raise BuildError(
                            f"update out of range: '{variables[c].name}'={Y[r, c]} "
                            f"from state ({_fmt(variables, Xs[r])}) by command at line "
                            f"{cmd.source.line} in module {cmd.module_name}")
                    srcs.append(rows + frontier_start)
                    keys.append(encode(Y))
                    rates.append(rate)
                    labs.append(np.full(rows.size, label_id[gen.label], dtype=np.int32))
                    dests.append(Y)
            if not srcs:
                break
            src = np.concatenate(srcs)
            key = np.concatenate(keys)
            rate = np.concatenate(rates)
            lab = np.concatenate(labs)
            Y = np.concatenate(dests)
            # discovery order: by source state, then generator order
            order = np.argsort(src, kind="stable")
            src, key, rate, lab, Y = src[order], key[order], rate[order], lab[order], Y[order]
            t_src.append(src)
            t_key.append(key)
            t_rate.append(rate)
            t_label.append(lab)

            pos = np.searchsorted(known_keys, key)
            pos_c = np.minimum(pos, known_keys.size - 1)
            is_new = known_keys[pos_c] != key
            new_keys, first = np.unique(key[is_new], return_index=True)
            if new_keys.size == 0:
                break
            first_rows = np.flatnonzero(is_new)[first]
            by_discovery = np.argsort(first_rows, kind="stable")
            new_keys = new_keys[by_discovery]
            new_states = Y[first_rows[by_discovery]]
            if n_states + new_keys.size > state_cap:
                raise BuildError(f"state count exceeds cap of {state_cap}")
            new_idx = np.arange(n_states, n_states + new_keys.size, dtype=np.int64)
            state_blocks.append(new_states)
            key_blocks.append(new_keys)
            merged = np.concatenate([known_keys, new_keys])
            merged_idx = np.concatenate([known_idx, new_idx])
            srt = np.argsort(merged, kind="stable")
            known_keys, known_idx = merged[srt], merged_idx[srt]
            frontier_start = n_states
            n_states += new_keys.size
            frontier = new_states

    states = np.concatenate(state_blocks)
    if t_src:
        src = np.concatenate(t_src)
        key = np.concatenate(t_key)
        rate = np.concatenate(t_rate)
        lab = np.concatenate(t_label)
        dst = known_idx[np.searchsorted(known_keys, key)]
    else:
        src = dst = np.zeros(0, dtype=np.int64)
        rate = np.zeros(0)
        lab = np.zeros(0, dtype=np.int32)
    src, dst, rate, lab = _merge(src, dst, rate, lab)
    return StateSpace(model, consts, variables, states, src, dst, rate, lab, labels)


def _merge(src, dst, rate, lab):
    """Sum parallel transitions sharing (source, destination, label)."""
    order = np.lexsort((lab, dst, src))
    src, dst, rate, lab = src[order], dst[order], rate[order], lab[order]
    if src.size == 0:
        return src, dst, rate, lab
    start = np.ones(src.size, dtype=bool)
    start[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1]) | (lab[1:] != lab[:-1])
    groups = np.flatnonzero(start)
    summed = np.add.reduceat(rate, groups)
    return src[groups], dst[groups], summed, lab[groups]


def _fmt(variables: Iterable[Variable], row) -> str:
    return ", ".join(f"{v.name}={int(x)}" for v, x in zip(variables, row))


def from_rates(n_states: int, transitions: Iterable[tuple], initial: int = 0) -> StateSpace:
    """Small hand-made chain for tests: ``transitions`` are (src, dst, rate[, label])."""
    from .parser import ModelIR as _IR

    rows = list(transitions)
    labels: list = [None]
    src, dst, rate, lab = [], [], [], []
    for t in rows:
        s, d, r = t[:3]
        name = t[3] if len(t) > 3 else None
        if name not in labels:
            labels.append(name)
        src.append(s)
        dst.append(d)
        rate.append(float(r))
        lab.append(labels.index(name))
    model = _IR("ctmc", (), (), (), (), ())
    variables = [Variable("s", 0, max(n_states - 1, 0), False, initial)]
    states = np.arange(n_states, dtype=np.int64)[:, None]
    merged = _merge(np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                    np.array(rate), np.array(lab, dtype=np.int32))
    return StateSpace(model, {}, variables, states, *merged, labels, initial=initial)


def one_step(space: StateSpace, index: int) -> list[tuple[int, float, str]]:
    """Outgoing transitions of one state as (destination, rate, label)."""
    lo, hi = np.searchsorted(space.src, [index, index + 1])
    return [(int(space.dst[k]), float(space.rate[k]), space.label_name(space.label[k]))
            for k in range(lo, hi)]


__all__ = ["BuildError", "StateSpace", "Variable", "build", "from_rates", "one_step",
           "DEFAULT_STATE_CAP", "ExprError"]
