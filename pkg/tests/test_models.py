import itertools

import numpy as np
import pytest

from gridcheck.expr import eval_expr
from gridcheck.models import (GridParams, LineParams, build_compact, build_line, build_tower,
                              compact_text, line_text, tower_text)
from gridcheck.parser import parse_model
from gridcheck.properties import evaluate, parse_property, parse_property_file
from gridcheck.routing import NORMAL, REROUTED, LineTopology, derive_link_rules
from gridcheck.statespace import build

from conftest import fixture_text

STEADY_ANY = "S=? [failedSN>0 | failedBN>0]"


def _value(space, text, consts=None):
    return evaluate(space, parse_property(text, space.model, consts)).value


# -- compact ------------------------------------------------------------------------------

def test_compact_generator_matches_fixture(compact_space):
    gen = build(build_compact())
    assert gen.n_states == compact_space.n_states
    assert gen.n_transitions == compact_space.n_transitions
    np.testing.assert_array_equal(np.sort(gen.rate), np.sort(compact_space.rate))
    for q in (STEADY_ANY, "S=? [failedBN>0]", "S=? [failedSN>0]",
              'R{"AvgEnergyBN"}=? [C<=168]', 'R{"AvgEnergySN"}=? [S]'):
        assert _value(gen, q) == pytest.approx(_value(compact_space, q), rel=1e-12, abs=1e-15), q


def test_compact_defaults_round_trip():
    text = compact_text()
    assert parse_model(text) == build_compact()
    assert "const int SIZE_BN=100;" in text and "const double pCHEAPLINK=0.95;" in text


def test_compact_fast_repair_of_both_kinds():
    space = build(build_compact(GridParams(RECOVERYTIME_BN=12, RECOVERYTIME_SN=12)))
    assert _value(space, STEADY_ANY) == pytest.approx(8.333333217179349e-4, rel=1e-3)


def test_compact_minimal_caps():
    space = build(build_compact(GridParams(MAX_SN_FAIL=1, MAX_BN_FAIL=1)))
    assert space.n_states == 8
    cols = space.columns
    got = {(r[cols["mode"]], r[cols["failedSN"]], r[cols["failedBN"]]) for r in space.states}
    assert got == set(itertools.product((1, 2), (0, 1), (0, 1)))


def test_repair_priority_blocks_sensor_repair():
    space = build(build_compact(GridParams(MAX_SN_FAIL=1, MAX_BN_FAIL=1)))
    cols = space.columns
    both = [i for i, r in enumerate(space.states)
            if r[cols["failedSN"]] == 1 and r[cols["failedBN"]] == 1]
    for s in both:
        out = space.dst[space.src == s]
        # the only way out of "both failed" is fixing the bone node
        assert all(space.states[d][cols["failedSN"]] == 1 for d in out)


@pytest.mark.parametrize("changes,match", [
    ({"SIZE_BN": 0}, "SIZE_BN"),
    ({"MAX_BN_FAIL": 2.5}, "MAX_BN_FAIL"),
    ({"SLEEPTIME": 0}, "SLEEPTIME"),
    ({"pCHEAPLINK": 1.2}, "pCHEAPLINK"),
    ({"cSNTX": -1}, "cSNTX"),
    ({"MAX_SN_FAIL": 5001}, "MAX_SN_FAIL"),
    ({"MAX_BN_FAIL": 101}, "MAX_BN_FAIL"),
])
def test_grid_params_validation(changes, match):
    with pytest.raises(ValueError, match=match):
        GridParams().replace(**changes)


# -- tower --------------------------------------------------------------------------------

def test_tower_generator_matches_fixture(tower_space):
    gen = build(build_tower(10))
    assert gen.n_states == tower_space.n_states == 1024
    assert gen.n_transitions == tower_space.n_transitions
    queries = parse_property_file(fixture_text("tower.csl"), tower_space.model, {"T": 1e4})
    for p in queries:
        want = evaluate(tower_space, p).value
        got = evaluate(gen, parse_property(p.text, gen.model, {"T": 1e4})).value
        assert got == pytest.approx(want, rel=1e-12, abs=1e-18), p.name


def test_tower_reward_catalogue():
    m = build_tower(10)
    assert len(m.rewards) == 15
    assert len(build_tower(3).rewards) == 8


def test_single_sensor_closed_form():
    rf, rr = 0.2, 0.05
    space = build(build_tower(1, rFail=rf, rRecover=rr))
    assert space.n_states == 2
    assert _value(space, "S=? [failure=1]") == pytest.approx(rf / (rf + rr), rel=1e-9)


def test_tower_long_run_single_failure():
    space = build(build_tower(10))
    assert _value(space, "S=? [failure=1]") == pytest.approx(9.990005498998502e-4, rel=1e-4)


def test_tower_failure_tracking_cap():
    space = build(build_tower(4, max_failure_tracked=2))
    assert space.states[:, space.columns["failure"]].max() == 2


@pytest.mark.parametrize("kwargs", [{"n_sensors": 0}, {"n_sensors": 37}, {"rFail": 0},
                                    {"cSend": -1}, {"max_failure_tracked": 0}])
def test_tower_arguments(kwargs):
    with pytest.raises(ValueError):
        tower_text(**kwargs)


# -- line ---------------------------------------------------------------------------------

def _tx_pairs(model, failed, n):
    """Sender/receiver pairs whose TX synchronisation is enabled with all live towers awake."""
    env = dict(model.constant_values())
    env.update(sleeping=False, brokendevices=len(failed))
    for i in range(1, n + 1):
        env[f"state{i}"] = 0 if i in failed else 1
    pairs = set()
    for label in model.action_labels():
        if not label.startswith("TX"):
            continue
        mods = [m for m in model.modules if any(c.label == label for c in m.commands)]
        if all(any(eval_expr(c.guard, env) for c in m.commands if c.label == label)
               for m in mods):
            towers = [m for m in mods if m.name.startswith("tower")]
            sender = [m.name for m in towers
                      if any(c.label == label and c.updates for c in m.commands)]
            receiver = [m.name for m in towers if m.name not in sender]
            pairs.add((int(sender[0][5:]), int(receiver[0][5:])))
    return pairs


def test_line_guards_match_fixture(line_model):
    gen = build_line(10)
    sets = [set(c) for k in range(3) for c in itertools.combinations(range(1, 11), k)]
    assert len(sets) == 56
    bad = [(sorted(f), _tx_pairs(line_model, f, 10) ^ _tx_pairs(gen, f, 10)) for f in sets
           if _tx_pairs(line_model, f, 10) != _tx_pairs(gen, f, 10)]
    assert not bad, bad


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_small_lines_validate_and_build(n):
    text = line_text(n)
    model = parse_model(text)
    assert parse_model(text) == model
    if n <= 4:
        space = build(model)
        cols = space.columns
        assert space.n_states > 0
        # every tower can break, so the all-broken state is reachable
        towers = [cols[f"state{i}"] for i in range(1, n + 1)]
        assert (space.states[:, towers] == 0).all(axis=1).any()


def test_three_tower_line():
    rules = derive_link_rules(LineTopology(3), 2)
    send = {r.receiver: r for r in rules.send_rules(2)}
    assert set(send) == {1, 3}
    assert send[1].kind == NORMAL
    assert send[3].kind == REROUTED and send[3].conditions == (frozenset({1}),)
    assert _tx_pairs(build_line(3), {1}, 3) == {(2, 3)}
    assert _tx_pairs(build_line(3), {1, 3}, 3) == set()


def test_line_text_mentions_every_backup_reward():
    text = line_text(10)
    for i in range(1, 9):
        assert f'rewards "backup{i}{i + 2}"' in text
    for i in range(1, 11):
        assert f'rewards "battery{i}"' in text and f'rewards "fail{i}"' in text


def test_line_property_file_parses_against_generator():
    model = build_line(10)
    props = parse_property_file(fixture_text("line.csl"), model, {"T": 10})
    assert len(props) == 5


@pytest.mark.parametrize("n", [2, 13, 4.0])
def test_line_tower_count(n):
    with pytest.raises(ValueError, match="n_towers"):
        line_text(n)


@pytest.mark.parametrize("changes", [{"tTX": 0}, {"tLIFE": -5}, {"cRX": -1}])
def test_line_params_validation(changes):
    with pytest.raises(ValueError):
        LineParams(**changes)
