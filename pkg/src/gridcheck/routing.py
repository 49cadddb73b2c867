"""Static routing on a transmission line of towers.

Towers 1..N sit on a line.  Neighbours share a regular link (i, i+1); towers
two apart share a costly backup link (i, i+2).  Towers 1 and N are terminals:
they receive data but never forward it.
"""
from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Optional, Sequence

import numpy as np

REGULAR, BACKUP = "regular", "backup"
NORMAL, REROUTED, EXPENSIVE = "normal", "rerouted", "expensive"


@dataclass(frozen=True)
class LineTopology:
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("a line needs at least 3 towers")

    @property
    def towers(self) -> range:
        return range(1, self.n + 1)

    @property
    def terminals(self) -> tuple[int, int]:
        return (1, self.n)

    @property
    def regular_edges(self) -> list[tuple[int, int]]:
        return [(i, i + 1) for i in range(1, self.n)]

    @property
    def backup_edges(self) -> list[tuple[int, int]]:
        return [(i, i + 2) for i in range(1, self.n - 1)]

    def is_terminal(self, i: int) -> bool:
        return i == 1 or i == self.n

    def neighbours(self, i: int) -> list[tuple[int, str]]:
        out = []
        for step, kind in ((-1, REGULAR), (1, REGULAR), (-2, BACKUP), (2, BACKUP)):
            j = i + step
            if 1 <= j <= self.n:
                out.append((j, kind))
        return out

    def check_failed(self, failed: Iterable[int]) -> frozenset[int]:
        failed = frozenset(int(x) for x in failed)
        bad = [x for x in failed if not 1 <= x <= self.n]
        if bad:
            raise ValueError(f"tower ids out of range 1..{self.n}: {sorted(bad)}")
        return failed


def edge_kind(a: int, b: int) -> str:
    return BACKUP if abs(a - b) == 2 else REGULAR


@dataclass(frozen=True)
class Route:
    path: tuple[int, ...]

    @property
    def hops(self) -> tuple[str, ...]:
        return tuple(edge_kind(a, b) for a, b in zip(self.path, self.path[1:]))

    @property
    def backups(self) -> int:
        return sum(h == BACKUP for h in self.hops)

    @property
    def cost(self) -> tuple[int, int]:
        return (self.backups, len(self.path) - 1)

    @property
    def terminal(self) -> int:
        return self.path[-1]


@dataclass
class RouteTable:
    topology: LineTopology
    failed: frozenset[int]
    routes: dict[int, Optional[Route]]  # None marks an unroutable tower

    def summary(self) -> dict:
        ok = [r for r in self.routes.values() if r is not None]
        return {
            "regular_hops": sum(r.hops.count(REGULAR) for r in ok),
            "backup_hops": sum(r.backups for r in ok),
            "unroutable": sum(r is None for r in self.routes.values()),
        }

    def to_dict(self) -> dict:
        towers = []
        for i, r in sorted(self.routes.items()):
            if r is None:
                towers.append({"tower": i, "routable": False})
            else:
                towers.append({"tower": i, "routable": True, "path": list(r.path),
                               "hops": list(r.hops), "terminal": r.terminal})
        return {"n": self.topology.n, "failed": sorted(self.failed), "towers": towers,
                **self.summary()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format(self) -> str:
        lines = [f"towers: {self.topology.n}  failed: "
                 f"{','.join(map(str, sorted(self.failed))) or 'none'}"]
        for i, r in sorted(self.routes.items()):
            if r is None:
                lines.append(f"T{i}: UNROUTABLE")
                continue
            parts = [str(r.path[0])]
            for (a, b), kind in zip(zip(r.path, r.path[1:]), r.hops):
                parts.append(("=>" if kind == BACKUP else "->") + str(b))
            lines.append(f"T{i}: {''.join(parts)}  (backup {r.backups}, hops {len(r.path) - 1})")
        s = self.summary()
        lines.append(f"regular hops: {s['regular_hops']}  backup hops: {s['backup_hops']}  "
                     f"unroutable: {s['unroutable']}")
        return "\n".join(lines)


def _best_route(topo: LineTopology, failed: frozenset[int], source: int) -> Optional[Route]:
    # Dijkstra on (backups, hops); the path itself breaks remaining ties
    heap = [((0, 0), (source,))]
    settled: set[int] = set()
    best = None
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if best is not None and cost > best[0]:
            break
        if node in settled:
            continue
        settled.add(node)
        if node != source and topo.is_terminal(node):
            cand = (cost, 0 if node == 1 else 1, path)
            if best is None or cand < best:
                best = cand
            continue
        for nxt, kind in topo.neighbours(node):
            if nxt in failed or nxt in path:
                continue
            step = (cost[0] + (kind == BACKUP), cost[1] + 1)
            heapq.heappush(heap, (step, path + (nxt,)))
    return None if best is None else Route(best[2])


def compute_routes(topology: LineTopology, failed: Iterable[int] = ()) -> RouteTable:
    """Cheapest route of every live non-terminal tower.

    Cost is lexicographic: backup links first, then hop count.  Equal costs
    go to terminal 1.
    """
    failed = topology.check_failed(failed)
    routes = {i: _best_route(topology, failed, i)
              for i in topology.towers if not topology.is_terminal(i) and i not in failed}
    return RouteTable(topology, failed, routes)


# -- link rules -------------------------------------------------------------------------

def local_next_hop(topology: LineTopology, failed: frozenset[int], i: int) -> Optional[int]:
    """Next hop chosen from the state of nearby towers only.

    Tower i sends toward its home terminal (the nearer one, tower 1 on a
    tie).  ``f``/``r`` are the forward and reverse neighbours, ``fb``/``rb``
    the towers two steps away in each direction.
    """
    n = topology.n
    home, other = (1, n) if i - 1 <= n - i else (n, 1)
    d = -1 if home == 1 else 1
    f, r, fb, rb = i + d, i - d, i + 2 * d, i - 2 * d

    def alive(x):
        return 1 <= x <= n and x not in failed

    if alive(home) and alive(f):
        return f
    if not alive(f) and alive(home) and (not alive(r) or not alive(other)) and alive(fb):
        return fb
    if not alive(home) and not alive(r) and alive(rb):
        return rb
    if (not alive(home) or not alive(f)) and alive(r):
        return r
    return None


def optimal_next_hop(topology: LineTopology, failed: frozenset[int], i: int) -> Optional[int]:
    route = _best_route(topology, failed, i)
    return None if route is None else route.path[1]


POLICIES = {"local": local_next_hop, "optimal": optimal_next_hop}


@dataclass(frozen=True)
class LinkRule:
    sender: int
    receiver: int
    kind: str  # normal, rerouted or expensive
    conditions: tuple[frozenset[int], ...]  # minimal failure sets; empty for normal links

    @property
    def backup(self) -> bool:
        return edge_kind(self.sender, self.receiver) == BACKUP

    def applies(self, failed: frozenset[int]) -> bool:
        if self.sender in failed or self.receiver in failed:
            return False
        if self.kind == NORMAL:
            return True
        return any(c <= failed for c in self.conditions)

    def annotation(self) -> str:
        link = f"{min(self.sender, self.receiver)}-{max(self.sender, self.receiver)}"
        if not self.conditions:
            return link
        conds = " ".join("(" + "&".join(f"!{x}" for x in sorted(c)) + ")"
                         for c in self.conditions)
        return f"{link} {conds}"


@dataclass
class LinkRules:
    topology: LineTopology
    max_failures: int
    policy: str
    choices: dict[frozenset[int], dict[int, Optional[int]]]
    rules: list[LinkRule] = field(default_factory=list)

    def send_rules(self, tower: int) -> list[LinkRule]:
        return [r for r in self.rules if r.sender == tower]

    def receive_rules(self, tower: int) -> list[LinkRule]:
        return [r for r in self.rules if r.receiver == tower]

    def chosen(self, tower: int, failed: Iterable[int]) -> Optional[int]:
        return self.choices[frozenset(failed)].get(tower)

    def format(self) -> str:
        lines = []
        for i in self.topology.towers:
            recv = "  ".join(r.annotation() for r in self.receive_rules(i))
            send = "  ".join(r.annotation() for r in self.send_rules(i))
            lines.append(f"T{i}\treceive: {recv}\tsend: {send}")
        return "\n".join(lines)


def _minimal(sets: Iterable[frozenset[int]]) -> tuple[frozenset[int], ...]:
    sets = sorted(set(sets), key=lambda s: (len(s), sorted(s)))
    out: list[frozenset[int]] = []
    for s in sets:
        if not any(m <= s for m in out):
            out.append(s)
    return tuple(sorted(out, key=lambda s: sorted(s)))


def derive_link_rules(topology: LineTopology, max_failures: int = 2, policy: str = "local",
                      cap: int = 1_000_000) -> LinkRules:
    """Send/receive rules with the minimal failure sets under which each link is used.

    Every failure set of at most ``max_failures`` towers is enumerated and the
    next hop of each live non-terminal tower is recorded.
    """
    if max_failures < 0:
        raise ValueError("max_failures must be nonnegative")
    if policy not in POLICIES:
        raise ValueError(f"unknown policy '{policy}'")
    n = topology.n
    k_max = min(max_failures, n)
    total = sum(comb(n, k) for k in range(k_max + 1))
    if total > cap:
        raise ValueError(f"{total} failure sets exceed the cap of {cap}")
    pick = POLICIES[policy]
    choices: dict[frozenset[int], dict[int, Optional[int]]] = {}
    used: dict[tuple[int, int], list[frozenset[int]]] = {}
    for k in range(k_max + 1):
        for combo in itertools.combinations(topology.towers, k):
            failed = frozenset(combo)
            row = {}
            for i in topology.towers:
                if topology.is_terminal(i) or i in failed:
                    continue
                j = pick(topology, failed, i)
                row[i] = j
                if j is not None:
                    used.setdefault((i, j), []).append(failed)
            choices[failed] = row
    rules = []
    for (i, j), sets in sorted(used.items()):
        if frozenset() in sets:
            rules.append(LinkRule(i, j, NORMAL, ()))
        else:
            kind = EXPENSIVE if edge_kind(i, j) == BACKUP else REROUTED
            rules.append(LinkRule(i, j, kind, _minimal(sets)))
    return LinkRules(topology, max_failures, policy, choices, rules)


# -- cheap-link probability ----------------------------------------------------------------

@dataclass(frozen=True)
class CheapLinkEstimate:
    value: float
    std_error: Optional[float]
    mode: str
    samples: Optional[int] = None


def _cheap_counts(alive: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per failure draw: live non-terminal towers with a regular-only route, and routable ones.

    ``alive`` is a boolean (draws, N) matrix.  A regular-only route exists
    iff every tower between i and a live terminal is up; a route exists iff
    no two adjacent towers between i and that terminal are down.
    """
    m, n = alive.shape
    dead = ~alive
    # run of live towers touching each end
    left_ok = np.logical_and.accumulate(alive, axis=1)
    right_ok = np.logical_and.accumulate(alive[:, ::-1], axis=1)[:, ::-1]
    # no two consecutive dead towers from the end up to position j
    pair_dead = np.zeros_like(alive)
    pair_dead[:, 1:] = dead[:, 1:] & dead[:, :-1]
    left_reach = alive[:, :1] & ~np.logical_or.accumulate(pair_dead, axis=1)
    pair_dead_r = np.zeros_like(alive)
    pair_dead_r[:, :-1] = dead[:, :-1] & dead[:, 1:]
    right_reach = alive[:, -1:] & ~np.logical_or.accumulate(pair_dead_r[:, ::-1], axis=1)[:, ::-1]
    inner = slice(1, n - 1)
    live = alive[:, inner]
    # tower i needs the run to cover i-1 (towards 1) or i+1 (towards N)
    cheap = live & (left_ok[:, 0:n - 2] | right_ok[:, 2:n])
    routable = live & (left_reach[:, 0:n - 2] | right_reach[:, 2:n])
    return cheap.sum(axis=1), routable.sum(axis=1)


def estimate_cheap_link_probability(topology: LineTopology, failure_prob: Sequence[float],
                                    mode: str = "exact", n_samples: int = 100_000,
                                    seed: int = 0) -> CheapLinkEstimate:
    """Expected share of per-cycle transmissions that avoid backup links.

    Towers fail independently with the given probabilities.  Transmissions
    of failed or unroutable towers are left out of the denominator.
    """
    p = np.asarray(failure_prob, dtype=float)
    n = topology.n
    if p.shape == ():
        p = np.full(n, float(p))
    if p.shape != (n,):
        raise ValueError(f"need {n} failure probabilities")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("failure probabilities must lie in [0, 1]")
    if mode == "exact":
        if n > 20:
            raise ValueError("exact enumeration is limited to 20 towers")
        masks = np.arange(2**n, dtype=np.int64)
        dead = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
        weight = np.prod(np.where(dead, p, 1.0 - p), axis=1)
        cheap, routable = _cheap_counts(~dead)
        den = float(weight @ routable)
        value = float(weight @ cheap) / den if den > 0 else float("nan")
        return CheapLinkEstimate(value, 0.0, "exact")
    if mode != "monte-carlo":
        raise ValueError("mode must be 'exact' or 'monte-carlo'")
    from .simulator import make_rng

    rng = make_rng(seed)
    dead = rng.random((n_samples, n)) < p
    cheap, routable = _cheap_counts(~dead)
    x, y = cheap.astype(float), routable.astype(float)
    my = y.mean()
    if my == 0:
        return CheapLinkEstimate(float("nan"), None, "monte-carlo", n_samples)
    ratio = x.mean() / my
    # delta-method standard error of a ratio of means
    resid = x - ratio * y
    se = float(np.sqrt(resid.var(ddof=1) / n_samples) / my) if n_samples > 1 else None
    return CheapLinkEstimate(float(ratio), se, "monte-carlo", n_samples)
