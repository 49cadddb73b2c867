import pytest
from hypothesis import given, settings, strategies as st

from gridcheck.expr import BinOp, Ident, Lit, free_names
from gridcheck.numerics import SolverOptions
from gridcheck.properties import (BOUNDED_F, BOUNDED_G, BOUNDED_U, CUMUL_REWARD, STEADY_PROB,
                                  STEADY_REWARD, PropertyError, declared_query_constants,
                                  evaluate, parse_property, parse_property_file,
                                  split_property_file)

from conftest import fixture_text


@pytest.mark.parametrize("text,kind", [
    ("P=? [F<=10 failure=1]", BOUNDED_F),
    ("P=?[G<=10 s1]", BOUNDED_G),
    ("P=? [ s1 U<=10 !s1 ]", BOUNDED_U),
    ("S=? [failure=2]", STEADY_PROB),
    ('R{"TotalNumberOfRecoveries"}=? [C<=100]', CUMUL_REWARD),
    ('R{"TotalNumberOfSensorsFailures"}=?[S]', STEADY_REWARD),
])
def test_six_shapes(tower_model, text, kind):
    p = parse_property(text, tower_model)
    assert p.kind == kind
    assert p.text == text.strip()


def test_steady_disjunction(compact_model):
    p = parse_property("S=? [failedSN>0 | failedBN>0]", compact_model)
    assert p.kind == STEADY_PROB
    assert p.phi2 == BinOp("|", BinOp(">", Ident("failedSN"), Lit(0)),
                           BinOp(">", Ident("failedBN"), Lit(0)))


def test_bound_expression_uses_constant(compact_model):
    p = parse_property('R{"AvgEnergyBN"}=? [C<=24*T1]', compact_model, {"T1": 7})
    assert p.kind == CUMUL_REWARD and p.bound == 168.0
    assert p.reward == "AvgEnergyBN"


def test_unicode_bound(compact_model):
    assert parse_property('R{"AvgEnergyBN"}=? [C ≤ 24 * 2]', compact_model).bound == 48.0


def test_zero_bound_is_legal(tower_space):
    p = parse_property("P=? [F<=0 failure=1]", tower_space.model)
    assert p.bound == 0.0
    assert evaluate(tower_space, p).value == 0.0
    p = parse_property("P=? [F<=0 failure=0]", tower_space.model)
    assert evaluate(tower_space, p).value == 1.0


def test_formulas_and_constants_fold_into_predicates(compact_model):
    p = parse_property("S=? [osnf<1 & failedBN<MAX_BN_FAIL]", compact_model)
    assert free_names(p.phi2) == {"failedSN", "failedBN"}


@pytest.mark.parametrize("text,message", [
    ("P=? [F<=T failure=1]", "undefined constant T"),
    ('R{"nope"}=? [S]', "unknown reward structure 'nope'"),
    ("S=? [failure+1]", "not boolean"),
    ("S=? [s1 + 1 > 0]", "predicate"),
    ("S=? [ghost>0]", "undefined identifier ghost"),
    ("P=? [F<=-1 s1]", "nonnegative"),
    ("P=? [X s1]", "line 1"),
    ("Q=? [S]", "line 1"),
    ("P=? [F<=1 s1] extra", "line 1"),
    ("P=? [F s1]", "line 1"),
])
def test_errors(tower_model, text, message):
    with pytest.raises(PropertyError, match=message):
        parse_property(text, tower_model)


def test_syntax_errors_carry_column(tower_model):
    with pytest.raises(PropertyError, match=r"column \d+"):
        parse_property("P=? [X s1]", tower_model)


def test_property_file(tower_model):
    props = parse_property_file(fixture_text("tower.csl"), tower_model, {"T": 100})
    names = [p.name for p in props]
    assert names[:9] == [f"M{i}" for i in range(1, 10)]
    assert "LM1" in names and "LM2" in names
    assert all(p.bound == 100.0 for p in props if p.bound is not None)


def test_property_file_needs_t(tower_model):
    with pytest.raises(PropertyError, match="line 4: undefined constant T"):
        parse_property_file(fixture_text("tower.csl"), tower_model)


def test_property_file_declared_default(compact_model):
    props = parse_property_file(fixture_text("energy.csl"), compact_model)
    assert [p.bound for p in props] == [168.0, 168.0]
    props = parse_property_file(fixture_text("energy.csl"), compact_model, {"T1": 14})
    assert [p.bound for p in props] == [336.0, 336.0]


def test_split_and_declared_constants():
    text = '// c\nconst int T1=7;\n\n"a": S=? [x>0]\nS=? [y>0] // trailing\n'
    consts, queries = split_property_file(text)
    assert consts == [(2, "const int T1=7;")]
    assert queries == [(4, "a", "S=? [x>0]"), (5, None, "S=? [y>0]")]
    assert declared_query_constants(text) == ["T1"]


def test_malformed_name():
    with pytest.raises(PropertyError, match="malformed property name"):
        split_property_file('"a S=? [x>0]')


# -- evaluation ---------------------------------------------------------------------------

def test_tower_catalogue(tower_space):
    m = tower_space.model
    cases = [
        ('R{"TotalNumberOfRecoveries"}=?[C<=100000]', 0.9989001974867715),
        ("P=?[F<=10000 !s1]", 0.009950166250892718),
        ('R{"TotalNumberOfSensorsFailures"}=?[C<=1]', 9.999000099990002e-6),
    ]
    for text, want in cases:
        assert evaluate(tower_space, parse_property(text, m)).value == pytest.approx(want,
                                                                                    rel=1e-4)


def test_result_metadata(compact_space):
    p = parse_property("S=? [failedSN>0|failedBN>0]", compact_space.model)
    r = evaluate(compact_space, p)
    assert r.method == "gauss-seidel" and r.iterations > 0 and r.seconds >= 0
    p = parse_property("P=? [F<=1 failedBN>0]", compact_space.model)
    r = evaluate(compact_space, p)
    assert r.method == "uniformization" and r.iterations > 0


def test_true_predicate_has_full_mass(compact_space, tower_space):
    for space in (compact_space, tower_space):
        p = parse_property("S=? [true]", space.model)
        assert evaluate(space, p).value == pytest.approx(1.0, abs=1e-9)


_ATOMS = [f"s{i}" for i in range(1, 11)] + ["failure=0", "failure=1", "failure>=2"]


def _predicate():
    atom = st.sampled_from(_ATOMS)
    return st.recursive(atom, lambda sub: st.one_of(
        sub.map(lambda a: f"!({a})"),
        st.tuples(sub, st.sampled_from(["&", "|"]), sub).map(lambda t: f"({t[0]}){t[1]}({t[2]})")),
        max_leaves=4)


@settings(max_examples=25, deadline=None)
@given(phi=_predicate(), t=st.sampled_from([1.0, 50.0, 500.0, 5000.0]))
def test_globally_is_complement_of_eventually_not(tower_space, phi, t):
    m = tower_space.model
    g = evaluate(tower_space, parse_property(f"P=? [G<={t} {phi}]", m)).value
    f = evaluate(tower_space, parse_property(f"P=? [F<={t} !({phi})]", m)).value
    assert g + f == pytest.approx(1.0, abs=1e-9)


def test_probability_values_in_range(tower_space):
    props = parse_property_file(fixture_text("tower.csl"), tower_space.model, {"T": 1000})
    for p in props:
        v = evaluate(tower_space, p, SolverOptions()).value
        assert v >= 0
        if p.is_probability:
            assert v <= 1 + 1e-12
