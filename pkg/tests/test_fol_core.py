import pytest
from hypothesis import given, settings

from folparse.fol_core import (And, Exists, FOLSyntaxError, ForAll, Not, Pred, TopLevel,
                               UnboundVariable, alpha_equivalent, free_variables, iter_preds,
                               normalize_universal, parse_fol, print_fol, validate)

from conftest import SEATED_FOL, WORKED_FOL, formulas


def count_nodes(f, kind):
    if isinstance(f, kind):
        n = 1
    else:
        n = 0
    if isinstance(f, Pred):
        return n
    if isinstance(f, And):
        return n + sum(count_nodes(c, kind) for c in f.conjuncts)
    return n + count_nodes(f.body, kind)


def test_parse_worked_example():
    f = parse_fol(WORKED_FOL)
    assert isinstance(f, TopLevel) and f.id == 1
    assert count_nodes(f, Exists) == 4
    preds = list(iter_preds(f))
    assert len(preds) == 8
    assert sum(len(p.args) == 1 for p in preds) == 5
    assert sum(len(p.args) == 2 for p in preds) == 3


def test_parse_minimal():
    assert parse_fol("fol(1,some(A,man(A)))") == TopLevel(1, Exists("A", Pred("man", ("A",))))


def test_parse_allows_trailing_period_and_spaces():
    assert parse_fol(" fol(1, some(A, man(A))) .") == parse_fol("fol(1,some(A,man(A)))")


def test_unbound_variable():
    with pytest.raises(UnboundVariable) as exc:
        parse_fol("fol(1,some(A,eat(B)))")
    assert exc.value.name == "B"


@pytest.mark.parametrize("text, offset", [
    ("fol(1,some(A,man(A))", 20),
    ("fol(x,man(A))", 4),
    ("fol(1,some(a,man(a)))", 11),
    ("fol(1,some(A,man(A,A,A)))", None),
    ("fol(1,some(A,some(A)))", None),
    ("fol(1,some(A,man(A)))xyz", 21),
])
def test_syntax_errors_carry_offsets(text, offset):
    with pytest.raises(FOLSyntaxError) as exc:
        parse_fol(text)
    if offset is not None:
        assert exc.value.offset == offset


def test_nested_and_is_flattened():
    f = parse_fol("fol(1,some(A,and(a(A),and(b(A),c(A)))))")
    assert isinstance(f.body.body, And) and len(f.body.body.conjuncts) == 3


def test_print_minimal():
    assert print_fol(TopLevel(1, Exists("A", Pred("man", ("A",))))) == "fol(1,some(A,man(A)))"


def test_print_renames_by_binder_order():
    f = parse_fol("fol(2,some(Q,some(B7,r(B7,Q))))")
    assert print_fol(f) == "fol(2,some(A,some(B,r(B,A))))"


def test_worked_round_trip():
    f = parse_fol(WORKED_FOL)
    assert alpha_equivalent(parse_fol(print_fol(f)), f)
    assert print_fol(f) == WORKED_FOL


@given(formulas())
@settings(max_examples=200, deadline=None)
def test_parse_print_round_trip(f):
    g = parse_fol(print_fol(f))
    assert alpha_equivalent(f, g)
    assert print_fol(g) == print_fol(f)


def test_alpha_equivalence_is_binder_based():
    a = parse_fol("fol(1,some(A,some(B,r(A,B))))")
    b = parse_fol("fol(1,some(B,some(A,r(B,A))))")
    c = parse_fol("fol(1,some(A,some(B,r(B,A))))")
    assert alpha_equivalent(a, b)
    assert not alpha_equivalent(a, c)


def test_normalize_all_humans_eat():
    f = parse_fol("fol(1,all(A,some(B,and(human(A),and(eat(B),agent(B,A))))))")
    expected = parse_fol("fol(1,not(some(A,not(some(B,and(human(A),and(eat(B),agent(B,A))))))))")
    assert normalize_universal(f) == expected


def test_normalize_without_forall_is_identity():
    f = parse_fol(WORKED_FOL)
    assert normalize_universal(f) == f


def test_normalize_nested_forall_by_hand():
    f = TopLevel(1, ForAll("A", ForAll("B", Pred("r", ("A", "B")))))
    inner = Not(Exists("B", Not(Pred("r", ("A", "B")))))
    expected = TopLevel(1, Not(Exists("A", Not(inner))))
    assert normalize_universal(f) == expected


@given(formulas())
@settings(max_examples=100, deadline=None)
def test_normalize_idempotent_and_preserves_preds(f):
    g = normalize_universal(f)
    assert normalize_universal(g) == g
    assert list(iter_preds(g)) == list(iter_preds(f))


def test_free_variables_order():
    assert free_variables(And((Pred("r", ("B", "A")), Pred("s", ("C",))))) == ["B", "A", "C"]


def test_validate_worked_example_is_clean():
    rep = validate(parse_fol(WORKED_FOL))
    assert rep.ok and not rep.violations


def test_validate_arity_conflict():
    f = TopLevel(1, Exists("A", Exists("B", And((Pred("man", ("A",)), Pred("man", ("A", "B")))))))
    rep = validate(f)
    assert rep.kinds() == ["ArityConflict"]


def test_validate_reports_several_violations():
    f = TopLevel(1, ForAll("A", And((Pred("p", ("A", "Z")), Pred("q", ("A", "A", "A"))))))
    kinds = set(validate(f).kinds())
    assert {"UnboundVariable", "ResidualForAll", "BadArity"} <= kinds
    assert "ResidualForAll" not in validate(f, normalized=False).kinds()


def test_validate_seated_example():
    assert validate(parse_fol(SEATED_FOL)).ok


def test_validate_synthetic(synth_items):
    for _, fol in synth_items:
        assert validate(parse_fol(fol)).ok
