"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 parse or validation error,
3 solver or simulation error.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import sys
from dataclasses import asdict, fields
from decimal import Decimal, InvalidOperation
from importlib.resources import files
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .numerics import METHODS, SolverError, SolverOptions, bsccs
from .parser import ParseError, declared_constants, parse_model, parse_value, validate
from .properties import (PropertyError, declared_query_constants, evaluate,
                         parse_property_file, split_property_file)
from .routing import LineTopology, compute_routes, derive_link_rules, estimate_cheap_link_probability
from .simulator import SimulationError, estimate
from .statespace import DEFAULT_STATE_CAP, BuildError, build

OK, USAGE, PARSE, SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE, f"{self.prog}: error: {message}\n")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        if np.isnan(value):
            return "NaN"
        return repr(value)
    return str(value)


def _read(path: str) -> str:
    p = Path(path)
    if not p.exists():
        bundled = files("gridcheck") / "fixtures" / path
        if bundled.is_file():
            return bundled.read_text()
        raise UsageError(f"file not found: {path}")
    return p.read_text()


def parse_consts(items: Sequence[str]) -> dict:
    out = {}
    for item in items or ():
        for part in item.split(","):
            if "=" not in part:
                raise UsageError(f"expected NAME=VALUE, got '{part}'")
            name, value = part.split("=", 1)
            if not name.strip().isidentifier():
                raise UsageError(f"constant name must be an identifier, got '{name}'")
            try:
                out[name.strip()] = parse_value(value)
            except ParseError as exc:
                raise UsageError(str(exc)) from None
    return out


def _decimal(text: str) -> Decimal:
    try:
        return Decimal(text.strip())
    except InvalidOperation:
        raise UsageError(f"not a number: '{text}'") from None


def parse_sweep(text: str) -> tuple[str, list]:
    """``NAME=start:step:end`` with the end included when it lies on the grid."""
    if "=" not in text or text.count(":") != 2:
        raise UsageError(f"sweep must look like NAME=start:step:end, got '{text}'")
    name, rng = text.split("=", 1)
    if not name.strip().isidentifier():
        raise UsageError(f"sweep name must be an identifier, got '{name}'")
    start, step, end = (_decimal(x) for x in rng.split(":"))
    if step == 0:
        raise UsageError(f"sweep {name}: step must be nonzero")
    if (end - start) / step < 0:
        raise UsageError(f"sweep {name}: step points away from the end")
    count = int((end - start) / step) + 1
    integral = all(x == x.to_integral_value() and "." not in s and "e" not in s.lower()
                   for x, s in zip((start, step, end), rng.split(":")))
    values = [start + k * step for k in range(count)]
    return name.strip(), [int(v) if integral else float(v) for v in values]


def _solver_options(args) -> SolverOptions:
    try:
        return SolverOptions(args.method, args.epsilon, args.max_iters)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_model(path: str, consts: dict):
    model = parse_model(_read(path), consts, ignore_unknown=True)
    diags = validate(model)
    if diags:
        raise ParseError("model failed validation:\n  " + "\n  ".join(diags))
    return model


def _write(text: str, output: Optional[str]) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _rows_out(header: list[str], rows: list[list], fmt: str, output: Optional[str]) -> None:
    if fmt == "json":
        objs = [dict(zip(header, r)) for r in rows]
        for o in objs:
            for k, v in o.items():
                if isinstance(v, float) and not np.isfinite(v):
                    o[k] = None
        _write(json.dumps(objs, indent=2) + "\n", output)
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
        _write(buf.getvalue(), output)
    else:
        cells = [header] + [[_fmt(x) for x in r] for r in rows]
        widths = [max(len(c[i]) for c in cells) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
        _write("\n".join(lines) + "\n", output)


def _name(label, text) -> str:
    return label if label is not None else text


# -- subcommands ----------------------------------------------------------------------------

def cmd_check(args) -> int:
    consts = parse_consts(args.const)
    opts = _solver_options(args)
    model = _load_model(args.model, consts)
    props = parse_property_file(_read(args.props), model, consts)
    space = build(model, args.state_cap)
    rows, status = [], OK
    for p in props:
        try:
            r = evaluate(space, p, opts)
            rows.append([_name(p.name, p.text), r.value, r.method, r.iterations,
                         round(r.seconds, 3)])
        except SolverError as exc:
            print(f"error: {_name(p.name, p.text)}: {exc}", file=sys.stderr)
            rows.append([_name(p.name, p.text), float("nan"), opts.method, 0, 0.0])
            status = SOLVER
    _rows_out(["property", "value", "method", "iterations", "seconds"], rows,
              args.format, args.output)
    return status


def cmd_sweep(args) -> int:
    consts = parse_consts(args.const)
    opts = _solver_options(args)
    sweeps = [parse_sweep(s) for s in args.sweep or ()]
    names = [n for n, _ in sweeps]
    if len(set(names)) != len(names):
        raise UsageError("a constant is swept twice")
    total = int(np.prod([len(v) for _, v in sweeps])) if sweeps else 1
    if total > args.max_points:
        raise UsageError(f"{total} grid points exceed --max-points {args.max_points}")
    model_text, props_text = _read(args.model), _read(args.props)
    declared = set(declared_constants(model_text))
    declared_q = set(declared_query_constants(props_text))
    for n in names:
        if n not in declared and n not in declared_q:
            raise UsageError(f"sweep constant '{n}' is not declared in the model or property file")
    queries = split_property_file(props_text)[1]
    labels = [_name(label, text) for _, label, text in queries]

    spaces: dict = {}
    rows, status = [], OK
    for point in itertools.product(*(v for _, v in sweeps)):
        here = {**consts, **dict(zip(names, point))}
        key = tuple(sorted((k, v) for k, v in here.items() if k in declared))
        try:
            if key not in spaces:
                spaces.clear()  # one model at a time keeps memory flat
                model = _load_model(args.model, here)
                spaces[key] = (model, build(model, args.state_cap))
            model, space = spaces[key]
            props = parse_property_file(props_text, model, here)
        except (ParseError, PropertyError, BuildError) as exc:
            print(f"error at {_point(names, point)}: {exc}", file=sys.stderr)
            rows += [[*point, lab, float("nan")] for lab in labels]
            status = SOLVER
            continue
        for p in props:
            try:
                value = evaluate(space, p, opts).value
            except SolverError as exc:
                print(f"error at {_point(names, point)}: {_name(p.name, p.text)}: {exc}",
                      file=sys.stderr)
                value = float("nan")
                status = SOLVER
            rows.append([*point, _name(p.name, p.text), value])
    _rows_out([*names, "property", "value"], rows, args.format or "csv", args.output)
    return status


def _point(names, point) -> str:
    return ", ".join(f"{n}={_fmt(v)}" for n, v in zip(names, point)) or "base point"


def cmd_simulate(args) -> int:
    consts = parse_consts(args.const)
    if args.samples < 1:
        raise UsageError("--samples must be at least 1")
    if args.seed < 0:
        raise UsageError("--seed must be nonnegative")
    model = _load_model(args.model, consts)
    props = parse_property_file(_read(args.props), model, consts)
    space = build(model, args.state_cap)
    rows = []
    for p in props:
        if p.is_steady and args.horizon is None:
            raise UsageError(f"{_name(p.name, p.text)}: steady-state estimation needs --horizon")
        est = estimate(space, p, args.samples, args.seed, args.horizon)
        se = est.std_error if est.std_error is not None else float("nan")
        rows.append([_name(p.name, p.text), est.value, se, est.n, est.seed, est.generator])
    _rows_out(["property", "estimate", "std_error", "samples", "seed", "generator"], rows,
              args.format, args.output)
    return OK


def _ids(text: Optional[str]) -> list[int]:
    if not text:
        return []
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"tower ids must be integers, got '{text}'") from None


def cmd_routes(args) -> int:
    try:
        topo = LineTopology(args.n)
        failed = topo.check_failed(_ids(args.failed))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = []
    if args.failure_prob is not None:
        try:
            est = estimate_cheap_link_probability(topo, args.failure_prob, args.mode,
                                                  args.samples, args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if args.format == "json":
            out.append(json.dumps(asdict(est), indent=2))
        else:
            se = "" if not est.std_error else f" +- {est.std_error!r}"
            out.append(f"cheap-link probability ({est.mode}): {est.value!r}{se}")
    elif args.rules:
        try:
            rules = derive_link_rules(topo, args.max_failures, args.policy)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if args.format == "json":
            out.append(json.dumps([{"sender": r.sender, "receiver": r.receiver, "kind": r.kind,
                                    "conditions": [sorted(c) for c in r.conditions]}
                                   for r in rules.rules], indent=2))
        else:
            out.append(rules.format())
    else:
        table = compute_routes(topo, failed)
        out.append(table.to_json() if args.format == "json" else table.format())
    _write("\n".join(out) + "\n", args.output)
    return OK


def cmd_info(args) -> int:
    consts = parse_consts(args.const)
    model = _load_model(args.model, consts)
    space = build(model, args.state_cap)
    labels = [lab for lab in space.labels[1:]]
    lines = [
        f"states: {space.n_states}",
        f"transitions: {space.n_transitions}",
        f"initial: {space.format_state(space.initial)}",
        f"labels: {len(labels)} ({', '.join(labels)})",
        f"rewards: {len(model.rewards)} ({', '.join(r.name for r in model.rewards)})",
        f"bsccs: {len(bsccs(space))}",
        f"max exit rate: {float(space.exit_rates.max()) if space.n_states else 0.0!r}",
    ]
    _write("\n".join(lines) + "\n", args.output)
    return OK


def _builder_kwargs(cls_fields: set, consts: dict, what: str) -> dict:
    unknown = set(consts) - cls_fields
    if unknown:
        raise UsageError(f"unknown {what} parameter(s): {', '.join(sorted(unknown))}")
    return consts


def cmd_gen(args) -> int:
    from . import models

    consts = parse_consts(args.const)
    try:
        if args.model == "compact":
            kw = _builder_kwargs({f.name for f in fields(models.GridParams)}, consts, "compact")
            text = models.compact_text(models.GridParams(**kw))
        elif args.model == "tower":
            kw = _builder_kwargs({"rFail", "rRecover", "rSend", "cSend", "MAXfailure"},
                                 consts, "tower")
            track = kw.pop("MAXfailure", None)
            text = models.tower_text(args.n if args.n is not None else 10,
                                     max_failure_tracked=track, **kw)
        else:
            kw = _builder_kwargs({f.name for f in fields(models.LineParams)}, consts, "line")
            text = models.line_text(args.n if args.n is not None else 10,
                                    models.LineParams(**kw), args.max_failures, args.policy)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    _write(text if text.endswith("\n") else text + "\n", args.output)
    return OK


# -- argument parsing -----------------------------------------------------------------------

def _common(p, solver=True):
    p.add_argument("--const", action="append", metavar="NAME=VALUE",
                   help="constant value; repeatable, or comma-separated")
    p.add_argument("--state-cap", type=int, default=DEFAULT_STATE_CAP,
                   help="abort when exploration exceeds this many states")
    p.add_argument("--output", "-o", help="write to this file instead of stdout")
    if solver:
        p.add_argument("--method", choices=METHODS, default="gauss-seidel",
                       help="steady-state method")
        p.add_argument("--epsilon", type=float, default=1e-9, help="convergence threshold")
        p.add_argument("--max-iters", type=int, default=10_000,
                       help="iteration limit for steady-state methods")


def make_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gridcheck", description="Model checking for sensor-network grid models.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("check", help="evaluate every query in a property file")
    p.add_argument("model")
    p.add_argument("props")
    _common(p)
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sweep", help="evaluate queries over a grid of constant values")
    p.add_argument("model")
    p.add_argument("props")
    _common(p)
    p.add_argument("--sweep", action="append", metavar="NAME=start:step:end",
                   help="swept constant; repeat for a cartesian product")
    p.add_argument("--max-points", type=int, default=100_000, help="grid size limit")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="estimate queries by Monte Carlo simulation")
    p.add_argument("model")
    p.add_argument("props")
    _common(p, solver=False)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=float, help="run length for steady-state queries")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("routes", help="routing tables for a line of towers")
    p.add_argument("--n", type=int, default=10, help="number of towers")
    p.add_argument("--failed", help="comma-separated failed tower ids")
    p.add_argument("--rules", action="store_true", help="print derived send/receive rules")
    p.add_argument("--max-failures", type=int, default=2)
    p.add_argument("--policy", choices=("local", "optimal"), default="local")
    p.add_argument("--failure-prob", type=float,
                   help="estimate the cheap-link probability for this per-tower failure probability")
    p.add_argument("--mode", choices=("exact", "monte-carlo"), default="exact")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_routes)

    p = sub.add_parser("info", help="state-space statistics")
    p.add_argument("model")
    _common(p, solver=False)
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("gen", help="print a generated model")
    p.add_argument("model", choices=("compact", "tower", "line"))
    p.add_argument("--n", type=int, help="sensors (tower) or towers (line)")
    p.add_argument("--const", action="append", metavar="NAME=VALUE",
                   help="builder parameter; repeatable")
    p.add_argument("--max-failures", type=int, default=2,
                   help="failure-set size covered by line guards")
    p.add_argument("--policy", choices=("local", "optimal"), default="local")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_gen)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gridcheck: {exc}", file=sys.stderr)
        return USAGE
    except (ParseError, PropertyError, BuildError) as exc:
        print(f"gridcheck: {exc}", file=sys.stderr)
        return PARSE
    except (SolverError, SimulationError) as exc:
        print(f"gridcheck: {exc}", file=sys.stderr)
        return SOLVER


if __name__ == "__main__":
    sys.exit(main())
