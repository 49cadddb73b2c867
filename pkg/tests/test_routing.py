import itertools
import json
import random

import numpy as np
import pytest

from gridcheck.routing import (BACKUP, EXPENSIVE, NORMAL, REGULAR, REROUTED, LineTopology,
                               Route, compute_routes, derive_link_rules,
                               estimate_cheap_link_probability)

TEN = LineTopology(10)


def brute_force(topo, failed, source):
    """Cheapest simple path by exhaustive DFS; terminals end a path."""
    best = None

    def walk(path):
        nonlocal best
        node = path[-1]
        if node != source and topo.is_terminal(node):
            r = Route(tuple(path))
            key = (r.cost, 0 if node == 1 else 1, r.path)
            if best is None or key < best[0]:
                best = (key, r)
            return
        for step in (-2, -1, 1, 2):
            nxt = node + step
            if 1 <= nxt <= topo.n and nxt not in failed and nxt not in path:
                walk(path + [nxt])

    walk([source])
    return None if best is None else best[1]


def paths(table):
    return {i: (r.path if r else None) for i, r in table.routes.items()}


# -- seven reference failure scenarios --------------------------------------------------

def test_all_operational():
    t = compute_routes(TEN, [])
    for i in (2, 3, 4, 5):
        assert t.routes[i].terminal == 1
    for i in (6, 7, 8, 9):
        assert t.routes[i].terminal == 10
    assert all(r.backups == 0 for r in t.routes.values())
    assert t.summary() == {"regular_hops": 20, "backup_hops": 0, "unroutable": 0}


def test_terminal_one_failed():
    t = compute_routes(TEN, [1])
    assert all(r.terminal == 10 and r.backups == 0 for r in t.routes.values())


def test_tower_three_failed():
    t = compute_routes(TEN, [3])
    assert t.routes[2].path == (2, 1)
    assert t.routes[4].path == (4, 5, 6, 7, 8, 9, 10)
    assert t.routes[5].terminal == 10
    assert all(r.backups == 0 for r in t.routes.values())
    assert 3 not in t.routes


def test_towers_one_and_three_failed():
    r = compute_routes(TEN, [1, 3]).routes[2]
    assert r.path[:2] == (2, 4) and r.hops[0] == BACKUP
    assert r.backups == 1


def test_towers_one_and_four_failed():
    assert paths(compute_routes(TEN, [1, 4])) == {
        2: (2, 3, 5, 6, 7, 8, 9, 10), 3: (3, 5, 6, 7, 8, 9, 10), 5: (5, 6, 7, 8, 9, 10),
        6: (6, 7, 8, 9, 10), 7: (7, 8, 9, 10), 8: (8, 9, 10), 9: (9, 10)}


def test_towers_two_and_nine_failed():
    t = compute_routes(TEN, [2, 9])
    # 3..5 need the skip over 2, 6..8 the skip over 9; one backup each
    assert paths(t) == {3: (3, 1), 4: (4, 3, 1), 5: (5, 4, 3, 1), 6: (6, 7, 8, 10),
                        7: (7, 8, 10), 8: (8, 10)}
    assert all(r.backups == 1 for r in t.routes.values())


def test_towers_one_three_seven_failed():
    assert paths(compute_routes(TEN, [1, 3, 7])) == {
        2: (2, 4, 5, 6, 8, 9, 10), 4: (4, 5, 6, 8, 9, 10), 5: (5, 6, 8, 9, 10),
        6: (6, 8, 9, 10), 8: (8, 9, 10), 9: (9, 10)}


@pytest.mark.parametrize("failed", [(), (1,), (3,), (1, 3), (1, 4), (2, 9), (1, 3, 7)])
def test_scenarios_match_brute_force(failed):
    t = compute_routes(TEN, failed)
    for i, r in t.routes.items():
        assert r == brute_force(TEN, set(failed), i)


def test_unroutable_tower():
    t = compute_routes(TEN, [3, 4, 9])
    # 5..8 are cut off from 1 by the gap 3-4 and need 8=>10 towards 10
    assert t.routes[2].path == (2, 1)
    assert t.routes[8].path == (8, 10)
    t = compute_routes(TEN, [3, 4, 8, 9])
    assert t.routes[5] is None and t.summary()["unroutable"] == 3


def test_invalid_ids():
    with pytest.raises(ValueError, match="out of range"):
        compute_routes(TEN, [0, 11])
    with pytest.raises(ValueError):
        LineTopology(2)


def test_serialisation():
    t = compute_routes(TEN, [1, 3])
    d = json.loads(t.to_json())
    assert d["failed"] == [1, 3] and d["backup_hops"] == 1
    row = next(x for x in d["towers"] if x["tower"] == 2)
    assert row["hops"][0] == BACKUP and row["path"][:2] == [2, 4]
    text = t.format()
    assert "T2: 2=>4->5" in text and "backup hops: 1" in text


# -- properties ----------------------------------------------------------------------------

def test_random_instances_against_brute_force():
    rng = random.Random(2024)
    for _ in range(1000):
        n = rng.randint(3, 12)
        topo = LineTopology(n)
        failed = {i for i in topo.towers if rng.random() < rng.choice((0.1, 0.25, 0.4))}
        t = compute_routes(topo, failed)
        for i, r in t.routes.items():
            oracle = brute_force(topo, failed, i)
            if oracle is None:
                assert r is None
                continue
            assert r.cost == oracle.cost
            assert len(set(r.path)) == len(r.path)
            assert not set(r.path) & failed
            assert topo.is_terminal(r.path[-1])
            assert all(abs(a - b) in (1, 2) for a, b in zip(r.path, r.path[1:]))
            assert not any(topo.is_terminal(x) for x in r.path[1:-1])


def test_adding_a_failure_never_lowers_cost():
    rng = random.Random(7)
    for _ in range(300):
        n = rng.randint(3, 12)
        topo = LineTopology(n)
        failed = {i for i in topo.towers if rng.random() < 0.2}
        extra = rng.choice(list(topo.towers))
        before = compute_routes(topo, failed).routes
        after = compute_routes(topo, failed | {extra}).routes
        for i, r in after.items():
            if r is not None:
                assert before[i] is not None and r.cost >= before[i].cost


# -- link rules ---------------------------------------------------------------------------

# receive/send rows of the link table for ten towers: (receiver, conditions) per sender,
# where each condition lists towers that must be down
TABLE = {
    2: [(1, None), (3, [{1}]), (4, [{1, 3}])],
    3: [(2, None), (4, [{1}, {2}]), (1, [{2, 4}, {10, 2}]), (5, [{1, 4}])],
    4: [(3, None), (5, [{1}, {3}]), (2, [{3, 5}, {10, 3}]), (6, [{1, 5}])],
    5: [(4, None), (6, [{1}, {4}]), (3, [{4, 6}, {10, 4}]), (7, [{1, 6}])],
    6: [(5, [{10}, {7}]), (7, None), (4, [{10, 5}]), (8, [{1, 7}, {5, 7}])],
    7: [(6, [{10}, {8}]), (8, None), (5, [{10, 6}]), (9, [{1, 8}, {6, 8}])],
    8: [(7, [{10}, {9}]), (9, None), (6, [{10, 7}]), (10, [{1, 9}, {7, 9}])],
    9: [(8, [{10}]), (10, None), (7, [{10, 8}])],
}


def table_choice(sender, failed):
    """Link the table prescribes: the most specific applicable condition wins."""
    options = []
    for receiver, conds in TABLE[sender]:
        if receiver in failed:
            continue
        if conds is None:
            options.append((0, receiver))
        else:
            hit = [len(c) for c in conds if c <= failed]
            if hit:
                options.append((max(hit), receiver))
    if not options:
        return None
    top = max(k for k, _ in options)
    chosen = [r for k, r in options if k == top]
    assert len(chosen) == 1, (sender, failed, chosen)
    return chosen[0]


def test_rules_choose_table_link_for_every_failure_set():
    rules = derive_link_rules(TEN, 2)
    sets = [frozenset(c) for k in range(3) for c in itertools.combinations(TEN.towers, k)]
    assert len(sets) == 56
    bad = []
    for failed in sets:
        for i in range(2, 10):
            if i in failed:
                continue
            if rules.chosen(i, failed) != table_choice(i, failed):
                bad.append((sorted(failed), i, rules.chosen(i, failed), table_choice(i, failed)))
    assert not bad, bad


def test_rules_equal_table_annotations():
    rules = derive_link_rules(TEN, 2)
    got = {(r.sender, r.receiver): (None if r.kind == NORMAL else
                                    sorted(sorted(c) for c in r.conditions))
           for r in rules.rules}
    want = {(i, j): (None if c is None else sorted(sorted(x) for x in c))
            for i, row in TABLE.items() for j, c in row}
    assert got == want


def test_tower_three_rules():
    rules = derive_link_rules(TEN, 2)
    send = {r.receiver: r for r in rules.send_rules(3)}
    assert send[2].kind == NORMAL
    assert send[4].kind == REROUTED and set(send[4].conditions) == {frozenset({1}),
                                                                       frozenset({2})}
    assert send[1].kind == EXPENSIVE and set(send[1].conditions) == {frozenset({2, 4}),
                                                                        frozenset({2, 10})}
    assert send[5].annotation() == "3-5 (!1&!4)"


def test_tower_one_receive_rules():
    recv = {r.sender: r for r in derive_link_rules(TEN, 2).receive_rules(1)}
    assert recv[2].kind == NORMAL
    assert recv[3].annotation() == "1-3 (!10&!2) (!2&!4)" or \
        recv[3].annotation() == "1-3 (!2&!4) (!10&!2)" or \
        set(recv[3].conditions) == {frozenset({2, 4}), frozenset({2, 10})}


def test_no_failures_means_one_normal_link_each():
    rules = derive_link_rules(TEN, 0)
    for i in range(2, 10):
        (r,) = rules.send_rules(i)
        assert r.kind == NORMAL and r.conditions == ()


def test_optimal_policy_differs_from_table():
    # the per-set optimum sends tower 5 towards 10 when tower 3 is down
    rules = derive_link_rules(TEN, 2, policy="optimal")
    assert rules.chosen(5, {3}) == 6
    assert derive_link_rules(TEN, 2).chosen(5, {3}) == 4


def test_rule_cap_and_arguments():
    with pytest.raises(ValueError, match="cap"):
        derive_link_rules(LineTopology(12), 6, cap=1000)
    with pytest.raises(ValueError):
        derive_link_rules(TEN, -1)
    with pytest.raises(ValueError, match="policy"):
        derive_link_rules(TEN, 1, policy="greedy")


def test_rules_format_lists_every_tower():
    text = derive_link_rules(TEN, 2).format()
    assert len(text.splitlines()) == 10
    assert "3-5 (!1&!4)" in text


# -- cheap-link probability -------------------------------------------------------------

def test_no_failures_gives_one():
    assert estimate_cheap_link_probability(TEN, [0.0] * 10).value == 1.0


def test_exact_matches_route_engine():
    p = np.linspace(0.05, 0.6, 10)
    num = den = 0.0
    for mask in range(2**10):
        failed = {i + 1 for i in range(10) if mask >> i & 1}
        w = np.prod([p[i] if (i + 1) in failed else 1 - p[i] for i in range(10)])
        routes = compute_routes(TEN, failed).routes.values()
        num += w * sum(1 for r in routes if r is not None and r.backups == 0)
        den += w * sum(1 for r in routes if r is not None)
    assert estimate_cheap_link_probability(TEN, p).value == pytest.approx(num / den, rel=1e-12)


def test_exact_and_monte_carlo_agree():
    exact = estimate_cheap_link_probability(TEN, 0.5)
    mc = estimate_cheap_link_probability(TEN, 0.5, "monte-carlo", 10**6, seed=1)
    assert abs(mc.value - exact.value) <= 3 * mc.std_error


def test_long_run_failure_level():
    v = estimate_cheap_link_probability(TEN, 0.00099).value
    assert v >= 0.99
    assert v == pytest.approx(0.9999863345, rel=1e-9)


def test_cheap_link_errors():
    with pytest.raises(ValueError, match="20 towers"):
        estimate_cheap_link_probability(LineTopology(21), 0.1)
    with pytest.raises(ValueError):
        estimate_cheap_link_probability(TEN, 1.5)
    with pytest.raises(ValueError):
        estimate_cheap_link_probability(TEN, [0.1] * 9)
    with pytest.raises(ValueError):
        estimate_cheap_link_probability(TEN, 0.1, mode="guess")


def test_hop_labels():
    r = Route((2, 4, 5))
    assert r.hops == (BACKUP, REGULAR) and r.cost == (1, 2)
