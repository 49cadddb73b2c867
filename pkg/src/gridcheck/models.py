"""Builders for the three grid models at arbitrary scale.

Each builder writes model text and parses it, so the result always
round-trips through :func:`parse_model`.  The ``*_text`` variants return the
text itself.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Union

from .parser import ModelIR, parse_model
from .routing import EXPENSIVE, NORMAL, REROUTED, LineTopology, LinkRule, derive_link_rules

Number = Union[int, float]


def _lit(value: Number) -> str:
    if isinstance(value, bool):
        raise TypeError("boolean where a number was expected")
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _const(name: str, value: Number, prefer_int: bool = True) -> str:
    if prefer_int and float(value).is_integer() and not isinstance(value, bool):
        return f"const int {name}={int(value)};"
    return f"const double {name}={_lit(float(value))};"


# -- compact model ----------------------------------------------------------------------

@dataclass(frozen=True)
class GridParams:
    SIZE_BN: int = 100
    MAX_BN_FAIL: int = 5
    SIZE_SN: int = 50
    MAX_SN_FAIL: int = 50
    SLEEPTIME: Number = 1
    MEANTIMEBETWEENFAILURE_SN: Number = 24000
    MEANTIMEBETWEENFAILURE_BN: Number = 36000
    RECOVERYTIME_SN: Number = 48
    RECOVERYTIME_BN: Number = 36
    PROCESSTIME: Number = 0.001
    pCHEAPLINK: float = 0.95
    cCHEAPTX: Number = 24
    cEXPENSIVETX: Number = 40
    cSNTX: Number = 8
    cSLEEP_BN: Number = 0.001
    cSLEEP_SN: Number = 0.001
    cPROCESS_BN: Number = 5
    cPROCESS_SN: Number = 2

    def __post_init__(self):
        for name in ("SIZE_BN", "MAX_BN_FAIL", "SIZE_SN", "MAX_SN_FAIL"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        for name in ("SLEEPTIME", "MEANTIMEBETWEENFAILURE_SN", "MEANTIMEBETWEENFAILURE_BN",
                     "RECOVERYTIME_SN", "RECOVERYTIME_BN", "PROCESSTIME"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.pCHEAPLINK <= 1:
            raise ValueError("pCHEAPLINK must lie in [0, 1]")
        for name in ("cCHEAPTX", "cEXPENSIVETX", "cSNTX", "cSLEEP_BN", "cSLEEP_SN",
                     "cPROCESS_BN", "cPROCESS_SN"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.MAX_SN_FAIL > self.SIZE_SN * self.SIZE_BN:
            raise ValueError("MAX_SN_FAIL exceeds the number of sensor nodes")
        if self.MAX_BN_FAIL > self.SIZE_BN:
            raise ValueError("MAX_BN_FAIL exceeds the number of bone nodes")

    def replace(self, **changes) -> "GridParams":
        return GridParams(**{**asdict(self), **changes})


# these are declared double regardless of value
_COMPACT_DOUBLES = {"PROCESSTIME", "pCHEAPLINK", "cSLEEP_BN", "cSLEEP_SN"}


def compact_text(params: GridParams = GridParams()) -> str:
    p = asdict(params)
    lines = ["// compact transmission line model, time unit: hour", "ctmc", ""]
    lines += [_const(k, v, k not in _COMPACT_DOUBLES) for k, v in p.items()]
    lines += [
        "",
        "const double rSLEEP=1/SLEEPTIME;",
        "const double rFAIL_SN=1/MEANTIMEBETWEENFAILURE_SN;",
        "const double rFAIL_BN=1/MEANTIMEBETWEENFAILURE_BN;",
        "const double rRECOVERY_SN=1/RECOVERYTIME_SN;",
        "const double rRECOVERY_BN=1/RECOVERYTIME_BN;",
        "const double rPROCESS=1/PROCESSTIME;",
        "",
        "// failure rates shrink as nodes drop out",
        "formula osnf = 1-(0.01*(failedSN/(SIZE_SN*SIZE_BN)));",
        "formula obnf = 1-(0.01*(failedBN/SIZE_BN));",
        "",
        "module controller",
        "    mode : [1..2] init 1; // 1 sleep, 2 process",
        "    [awakeup] mode=1 & failedBN<MAX_BN_FAIL & failedSN<MAX_SN_FAIL -> rSLEEP: (mode'=2);",
        "    [process] mode=2 & failedBN<MAX_BN_FAIL & failedSN<MAX_SN_FAIL -> rPROCESS: (mode'=1);",
        "endmodule",
        "",
        "module sensorNodes",
        "    failedSN : [0..MAX_SN_FAIL] init 0;",
        "    [failSN] failedSN<MAX_SN_FAIL -> osnf*rFAIL_SN: (failedSN'=failedSN+1);",
        "    [repairSN] failedSN>0 -> rRECOVERY_SN: (failedSN'=failedSN-1);",
        "endmodule",
        "",
        "module boneNodes",
        "    failedBN : [0..MAX_BN_FAIL] init 0;",
        "    [failBN] failedBN<MAX_BN_FAIL -> obnf*rFAIL_BN: (failedBN'=failedBN+1);",
        "    [repairBN] failedBN>0 -> rRECOVERY_BN: (failedBN'=failedBN-1);",
        "endmodule",
        "",
        "// bone nodes are repaired first",
        "module repairService",
        "    [repairBN] failedBN>0 -> true;",
        "    [repairSN] failedSN>0 & failedBN=0 -> true;",
        "endmodule",
        "",
        'rewards "AvgEnergyBN"',
        "    [awakeup] true : pCHEAPLINK*cCHEAPTX + (1-pCHEAPLINK)*cEXPENSIVETX;",
        "    mode=1 : cSLEEP_BN;",
        "    mode=2 : cPROCESS_BN;",
        "endrewards",
        "",
        'rewards "AvgEnergySN"',
        "    [awakeup] true : cSNTX;",
        "    mode=1 : cSLEEP_SN;",
        "    mode=2 : cPROCESS_SN;",
        "endrewards",
    ]
    return "\n".join(lines) + "\n"


def build_compact(params: GridParams = GridParams()) -> ModelIR:
    return parse_model(compact_text(params))


# -- single tower -----------------------------------------------------------------------

MAX_SENSORS = 36


def tower_text(n_sensors: int = 10, rFail: float = 1e-6, rRecover: float = 0.01,
               rSend: float = 1.0, cSend: Number = 1,
               max_failure_tracked: Optional[int] = None) -> str:
    if not isinstance(n_sensors, int) or not 1 <= n_sensors <= MAX_SENSORS:
        raise ValueError(f"n_sensors must be an integer in 1..{MAX_SENSORS}")
    if max_failure_tracked is None:
        max_failure_tracked = n_sensors
    if not isinstance(max_failure_tracked, int) or max_failure_tracked < 1:
        raise ValueError("max_failure_tracked must be a positive integer")
    for name, v in (("rFail", rFail), ("rRecover", rRecover), ("rSend", rSend)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    if cSend < 0:
        raise ValueError("cSend must be nonnegative")
    ids = range(1, n_sensors + 1)
    lines = [f"// base node with {n_sensors} sensors in a star, time unit: hour", "ctmc", "",
             f"const double rFail={_lit(float(rFail))};",
             f"const double rRecover={_lit(float(rRecover))};",
             f"const double rSend={_lit(float(rSend))};",
             _const("cSend", cSend),
             f"const int MAXfailure={max_failure_tracked};",
             "",
             "module failcount",
             "    failure : [0..MAXfailure] init 0;"]
    lines += [f"    [fail{i}] failure<MAXfailure -> (failure'=failure+1);" for i in ids]
    lines += [f"    [rec{i}] failure>0 -> (failure'=failure-1);" for i in ids]
    lines += ["endmodule", "", "module tower"]
    lines += [f"    s{i} : bool init true;" for i in ids]
    lines += [f"    [fail{i}] s{i} -> rFail: (s{i}'=false);" for i in ids]
    lines += [f"    [rec{i}] !s{i} -> rRecover: (s{i}'=true);" for i in ids]
    lines += [f"    [send{i}] s{i} -> rSend: true;" for i in ids]
    lines += ["endmodule", ""]

    def reward(name, items):
        return [f'rewards "{name}"', *(f"    {x}" for x in items), "endrewards", ""]

    lines += reward("Doublefailure", ["failure=2 : 1;"])
    lines += reward("Singlefailure", ["failure=1 : 1;"])
    lines += reward("TotalNumberOfCommunicationsToBN", [f"[send{i}] true : 1;" for i in ids])
    lines += reward("TotalNumberOfSensorsFailures", [f"[fail{i}] true : 1;" for i in ids])
    lines += reward("TotalNumberOfRecoveries", [f"[rec{i}] true : 1;" for i in ids])
    for i in ids:
        lines += reward(f"s{i}", [f"[send{i}] true : cSend;"])
    return "\n".join(lines)


def build_tower(n_sensors: int = 10, rFail: float = 1e-6, rRecover: float = 0.01,
                rSend: float = 1.0, cSend: Number = 1,
                max_failure_tracked: Optional[int] = None) -> ModelIR:
    return parse_model(tower_text(n_sensors, rFail, rRecover, rSend, cSend, max_failure_tracked))


# -- transmission line ------------------------------------------------------------------

@dataclass(frozen=True)
class LineParams:
    tSLEEP: Number = 1
    tOPERATION: Number = 0.01
    tLIFE: Number = 10000
    tRECOVERY: Number = 50
    tTX: Number = 5
    cTX10: Number = 120
    cTX20: Number = 200
    cRX: Number = 18
    cSleep: Number = 0.005

    def __post_init__(self):
        for name in ("tSLEEP", "tOPERATION", "tLIFE", "tRECOVERY", "tTX"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("cTX10", "cTX20", "cRX", "cSleep"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


MIN_TOWERS, MAX_TOWERS = 3, 12


@dataclass(frozen=True)
class _Link:
    label: str
    rule: LinkRule
    condition: frozenset


def _line_links(rules) -> list[_Link]:
    out = []
    for r in rules.rules:
        base = f"TX{r.sender}{r.receiver}"
        if len(r.conditions) <= 1:
            out.append(_Link(base, r, r.conditions[0] if r.conditions else frozenset()))
        else:
            for k, cond in enumerate(r.conditions):
                out.append(_Link(base + chr(ord("a") + k), r, cond))
    return out


def line_text(n_towers: int = 10, params: LineParams = LineParams(),
              max_failures_encoded: int = 2, policy: str = "local") -> str:
    if not isinstance(n_towers, int) or not MIN_TOWERS <= n_towers <= MAX_TOWERS:
        raise ValueError(f"n_towers must be an integer in {MIN_TOWERS}..{MAX_TOWERS}")
    n = n_towers
    topo = LineTopology(n)
    links = _line_links(derive_link_rules(topo, max_failures_encoded, policy))
    terminal = topo.is_terminal

    def down(x):
        return f"(state{x}=0 | state{x}=2)"

    def with_cond(guard, cond):
        return " & ".join([guard, *(down(x) for x in sorted(cond))])

    def send_guard(link):
        return with_cond(f"state{link.rule.sender}=1", link.condition)

    def recv_guard(link):
        j = link.rule.receiver
        own = f"state{j}=1" if terminal(j) else f"(state{j}=1 | state{j}=3)"
        return with_cond(own, link.condition)

    p = asdict(params)
    lines = [f"// transmission line of {n} towers, time unit: hour", "ctmc", ""]
    lines += [_const(k, v, k not in ("tOPERATION", "cSleep")) for k, v in p.items()]
    lines += [
        "",
        f"global brokendevices : [0..{n}] init 0;",
        "",
        "const double rSLEEP=1/tSLEEP;",
        "const double rOPERATION=1/tOPERATION;",
        "const double rFAIL=1/tLIFE;",
        "const double rRECOVERY=1/tRECOVERY;",
        "const double rTX=tTX*1000*60*60;",
        "",
        "module environment",
        "    sleeping : bool init true;",
        "    [wakeup] sleeping -> rSLEEP: (sleeping'=false);",
        "    // sleep once every live sender is done",
        "    [sleep] !sleeping" + "".join(f" & (state{i}!=1)" for i in topo.towers
                                        if not terminal(i)) + " -> rOPERATION: (sleeping'=true);",
    ]
    lines += [f"    [{lk.label}] true -> rTX: true;" for lk in links]
    lines += ["endmodule", ""]

    headings = {NORMAL: "regular", REROUTED: "rerouted", EXPENSIVE: "expensive"}
    for i in topo.towers:
        top = 2 if terminal(i) else 3
        lines += [f"module tower{i}",
                  f"    state{i} : [0..{top}] init 2; // 0 broken, 1 operational, 2 sleeping"
                  + ("" if terminal(i) else ", 3 done"),
                  f"    [wakeup] state{i}=2 -> (state{i}'=1);",
                  f"    [wakeup] state{i}=0 -> true;"]
        for kind in (NORMAL, REROUTED, EXPENSIVE):
            recv = [lk for lk in links if lk.rule.receiver == i and lk.rule.kind == kind]
            if recv:
                lines.append(f"    // {headings[kind]} receive")
                lines += [f"    [{lk.label}] {recv_guard(lk)} -> true;" for lk in recv]
        for kind in (NORMAL, REROUTED, EXPENSIVE):
            send = [lk for lk in links if lk.rule.sender == i and lk.rule.kind == kind]
            if send:
                lines.append(f"    // {headings[kind]} transmission")
                lines += [f"    [{lk.label}] {send_guard(lk)} -> (state{i}'=3);" for lk in send]
        if terminal(i):
            lines.append(f"    [sleep] state{i}=1 -> (state{i}'=2);")
        else:
            lines.append(f"    [sleep] state{i}=3 -> (state{i}'=2);")
        lines += [
            f"    [sleep] state{i}=0 | state{i}=2 -> true;",
            f"    [] state{i}>0 & brokendevices<{n} -> rFAIL: (state{i}'=0) & "
            f"(brokendevices'=brokendevices+1);",
            f"    [] state{i}=0 & brokendevices>0 -> rRECOVERY: (state{i}'=2) & "
            f"(brokendevices'=brokendevices-1);",
            "endmodule", ""]

    def reward(name, items):
        return [f'rewards "{name}"', *(f"    {x}" for x in items), "endrewards", ""]

    for a, b in topo.backup_edges:
        used = [lk for lk in links if {lk.rule.sender, lk.rule.receiver} == {a, b}]
        lines += reward(f"backup{a}{b}", [f"[{lk.label}] {send_guard(lk)} : 1;" for lk in used])
    for i in topo.towers:
        items = [f"state{i}=2 : cSleep;"]
        items += [f"[{lk.label}] {send_guard(lk)} : {'cTX20' if lk.rule.backup else 'cTX10'};"
                  for lk in links if lk.rule.sender == i]
        items += [f"[{lk.label}] {recv_guard(lk)} : cRX;" for lk in links if lk.rule.receiver == i]
        lines += reward(f"battery{i}", items)
    for i in topo.towers:
        lines += reward(f"receivedpacketsT{i}", [f"[{lk.label}] {recv_guard(lk)} : 1;"
                                                 for lk in links if lk.rule.receiver == i])
    for i in topo.towers:
        if not terminal(i):
            lines += reward(f"sentpacketsT{i}", [f"[{lk.label}] {send_guard(lk)} : 1;"
                                                 for lk in links if lk.rule.sender == i])
    for i in topo.towers:
        lines += reward(f"fail{i}", [f"state{i}=0 : 1;"])
    return "\n".join(lines)


def build_line(n_towers: int = 10, params: LineParams = LineParams(),
               max_failures_encoded: int = 2, policy: str = "local") -> ModelIR:
    return parse_model(line_text(n_towers, params, max_failures_encoded, policy))
