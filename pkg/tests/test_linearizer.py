import pytest
from hypothesis import given, settings

from folparse.fol_core import Not, Pred, iter_preds, normalize_universal, parse_fol
from folparse.linearizer import (AlignTarget, CapacityExceeded, Category, MalformedSequence,
                                 TokenSequence, alignment_targets, delinearize, from_text,
                                 infer_categories, linearize, relabel_by_first_use)
from folparse.metric import score

from conftest import SEATED_FOL, WORKED_FOL, WORKED_MAPPING, formulas


def count_not(f):
    if isinstance(f, Pred):
        return 0
    if hasattr(f, "conjuncts"):
        return sum(count_not(c) for c in f.conjuncts)
    return int(isinstance(f, Not)) + count_not(f.body)


def test_worked_mapping_verbatim():
    ts = linearize(parse_fol(WORKED_FOL))
    assert ts.text() == WORKED_MAPPING
    assert len(ts) == 21


def test_minimal_mapping():
    assert linearize(parse_fol("fol(1,some(A,man(A)))")).text() == "fol( man A )"


def test_seated_nested_scopes():
    ts = linearize(parse_fol(SEATED_FOL))
    assert ts.text() == ("fol( not( n1person A not( n1person B not( v1face C r1agent C A "
                         "r1theme C B ) ) ) )")
    f2 = delinearize(ts)
    assert score(parse_fol(SEATED_FOL), f2).f1 == 1.0


def test_worked_alignment_targets():
    ts = linearize(parse_fol(WORKED_FOL))
    got = {i: a for i, a in enumerate(alignment_targets(ts)) if a is not None}
    expected = {2: AlignTarget(0), 4: AlignTarget(0), 6: AlignTarget(0), 8: AlignTarget(0),
                10: AlignTarget(1, 8), 12: AlignTarget(1, 4), 13: AlignTarget(1, 2),
                15: AlignTarget(1, 4), 16: AlignTarget(1, 6), 18: AlignTarget(1, 6),
                19: AlignTarget(1, 8)}
    assert got == expected


def test_single_variable_alignment():
    assert [a for a in alignment_targets(from_text("fol( man A )")) if a] == [AlignTarget(0)]


def test_triple_occurrence_points_to_first():
    ts = from_text("fol( man A tall A r1in A B ball B )")
    al = alignment_targets(ts)
    assert al[4] == AlignTarget(1, 2) and al[6] == AlignTarget(1, 2)
    recent = alignment_targets(ts, "recent")
    assert recent[6] == AlignTarget(1, 4)


def test_capacity():
    f = parse_fol(WORKED_FOL)
    with pytest.raises(CapacityExceeded):
        linearize(f, max_len=20)
    assert len(linearize(f, max_len=None)) == 21


def test_linearize_rejects_residual_forall():
    with pytest.raises(ValueError):
        linearize(parse_fol("fol(1,all(A,man(A)))"))


def test_delinearize_minimal():
    assert delinearize("fol( man A )") == parse_fol("fol(1,some(A,man(A)))")


def test_delinearize_worked():
    f = delinearize(WORKED_MAPPING)
    assert score(parse_fol(WORKED_FOL), f).f1 == 1.0


@pytest.mark.parametrize("line", [
    "fol( man A",
    "fol( man A ) )",
    "fol( man )",
    "fol( A man A )",
    "fol( )",
    "fol( not( ) )",
    "not( man A )",
    "",
])
def test_delinearize_malformed(line):
    with pytest.raises(MalformedSequence):
        delinearize(line)


def test_variable_bound_at_lowest_common_scope():
    f = delinearize("fol( man A not( r1see B A dog B ) )")
    # B is local to the negation, A belongs to the top scope
    assert f == parse_fol("fol(1,some(A,and(man(A),not(some(B,and(r1see(B,A),dog(B)))))))")


def test_infer_categories():
    cats = infer_categories("fol( man A r1in A B not( x C ) )".split())
    assert "".join(c.value for c in cats) == "SUVBVVSUVSS"


@given(formulas())
@settings(max_examples=200, deadline=None)
def test_category_counts_and_round_trip(f):
    f = normalize_universal(f)
    ts = linearize(f, max_len=None)
    preds = list(iter_preds(f))
    cats = ts.categories
    assert cats.count(Category.U) == sum(len(p.args) == 1 for p in preds)
    assert cats.count(Category.B) == sum(len(p.args) == 2 for p in preds)
    assert cats.count(Category.V) == sum(len(p.args) for p in preds)
    assert cats.count(Category.S) == 2 + 2 * count_not(f)
    assert linearize(f, max_len=None) == ts
    assert score(f, delinearize(ts)).f1 == 1.0


@given(formulas())
@settings(max_examples=100, deadline=None)
def test_alignment_invariants(f):
    ts = linearize(f, max_len=None)
    al = alignment_targets(ts)
    firsts = {}
    for i, (tok, a) in enumerate(zip(ts.tokens, al)):
        if a is None:
            assert ts.categories[i] != Category.V
        elif a.decision == 1:
            assert ts.tokens[a.position] == tok and a.position < i
            assert ts.categories[a.position] == Category.V
        else:
            assert tok not in firsts
            firsts[tok] = i


def test_relabel_by_first_use():
    ts = from_text("fol( man C dog A r1see C A )")
    out = relabel_by_first_use(ts)
    assert out.text() == "fol( man A dog B r1see A B )"
    assert out.categories == ts.categories
    assert alignment_targets(out) == alignment_targets(ts)


def test_round_trip_synthetic(synth_items):
    for _, fol in synth_items:
        f = parse_fol(fol)
        ts = linearize(f)
        assert score(f, delinearize(ts)).f1 == 1.0
        assert isinstance(ts, TokenSequence)
