import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from folparse.fol_core import parse_fol
from folparse.linearizer import linearize
from folparse.metric import (LENGTH_BUCKETS, EmptyCorpus, InstanceTooLarge, _brute_force_count,
                             align_exhaustive, align_greedy, bucket_of, decompose_pairs, flatten,
                             load_formula, matched_count, score, score_corpus)

from conftest import SEATED_FOL, WORKED_FOL, WORKED_MAPPING, formulas
from mutate import mutate


def test_worked_pair_decomposition():
    ps = decompose_pairs(parse_fol(WORKED_FOL))
    kinds = ps.kinds()
    assert kinds[("scope", "pred")] == 8
    assert kinds[("pred", "var")] == 11
    assert kinds[("scope", "scope")] == 0
    assert len(ps) == 19


def test_seated_decomposition_has_scope_pairs():
    kinds = decompose_pairs(parse_fol(SEATED_FOL)).kinds()
    assert kinds[("scope", "scope")] == 3
    assert kinds[("scope", "pred")] == 5
    assert kinds[("pred", "var")] == 7


def test_identity_scores_one():
    for exhaustive in (False, True):
        rep = score(WORKED_FOL, WORKED_MAPPING, exhaustive=exhaustive)
        assert (rep.precision, rep.recall, rep.f1) == (1.0, 1.0, 1.0)
        assert rep.exact_match


def test_single_predicate_substitution():
    pred = WORKED_MAPPING.replace("n1woman", "n1man")
    for exhaustive in (False, True):
        rep = score(WORKED_FOL, pred, exhaustive=exhaustive)
        # the renamed predicate loses its scope pair and its argument pair
        assert rep.matched == 17 and rep.gold_total == 19 == rep.pred_total
        assert rep.f1 == pytest.approx(17 / 19)
        assert not rep.exact_match


def test_variable_renaming_is_free():
    renamed = WORKED_MAPPING.replace("A", "X").replace("C", "A").replace("X", "C")
    assert score(WORKED_FOL, renamed).f1 == 1.0
    g, p = flatten(load_formula(WORKED_FOL)), flatten(load_formula(renamed))
    assert align_greedy(g, p)[1] == align_exhaustive(g, p)[1] == 19


def test_swapped_arguments():
    rep = score("fol( r1see A B man A dog B )", "fol( r1see B A man A dog B )", exhaustive=True)
    # 3 scope pairs always match; the identity keeps man/dog arguments, the
    # swap keeps both r1see arguments: 2 of 4 argument pairs either way
    assert rep.matched == 5
    assert rep.gold_total == 7


def test_malformed_and_missing_predictions():
    for pred in (None, "fol( )", "fol( man A", "not a formula"):
        rep = score(WORKED_FOL, pred)
        assert rep.malformed and rep.f1 == 0.0 and rep.recall == 0.0
        assert rep.gold_total == 19


def test_string_match_reported():
    rep = score(WORKED_MAPPING, WORKED_MAPPING)
    assert rep.string_match and rep.exact_match


def test_string_match_is_up_to_letter_choice():
    # Boxer gold against its mapping, and letters renamed consistently
    assert score(WORKED_FOL, WORKED_MAPPING).string_match
    renamed = WORKED_MAPPING.replace(" A ", " Q ").replace(" C ", " A ").replace(" Q ", " C ")
    assert renamed != WORKED_MAPPING
    assert score(WORKED_FOL, renamed).string_match


def test_reordered_prediction_is_exact_but_not_string_equal():
    gold = "fol( n1man A v1run B r1agent B A )"
    pred = "fol( v1run B n1man A r1agent B A )"
    rep = score(gold, pred)
    assert rep.exact_match and rep.f1 == 1.0
    assert not rep.string_match


def test_load_formula_accepts_both_formats():
    a = flatten(load_formula(WORKED_FOL))
    b = flatten(load_formula(WORKED_MAPPING))
    assert len(a.preds) == len(b.preds) == 8


def test_exhaustive_limits():
    big = "fol( " + " ".join(f"p{i} {chr(65 + i)}" for i in range(9)) + " )"
    with pytest.raises(InstanceTooLarge):
        align_exhaustive(load_formula(big), load_formula(big))
    assert align_greedy(load_formula(big), load_formula(big))[1] == 18


def test_alignment_recount_matches(synth_items):
    rng = random.Random(3)
    for sent, fol in synth_items[:60]:
        g = flatten(parse_fol(fol))
        p = flatten(load_formula(mutate(linearize(parse_fol(fol)).text(), rng)))
        for al, count in (align_greedy(g, p), align_exhaustive(g, p)):
            assert matched_count(g, p, al) == count


def _tiny_pairs(seed, n):
    rng = random.Random(seed)
    pool = ["fol( man A r1see A B dog B )", "fol( man A not( run A ) )",
            "fol( a A b B r1x A B r1x B A )", "fol( a A not( b B r1x A B ) c A )",
            "fol( a A a B r1x A B )", "fol( not( a A ) not( a B ) )"]
    for _ in range(n):
        g = rng.choice(pool)
        yield g, mutate(g, rng, max_vars=4, max_scopes=3)


def test_branch_and_bound_matches_brute_force():
    for g, p in _tiny_pairs(0, 80):
        gf, pf = flatten(load_formula(g)), flatten(load_formula(p))
        assert align_exhaustive(gf, pf)[1] == _brute_force_count(gf, pf), (g, p)


def test_exhaustive_dominates_greedy(synth_items):
    rng = random.Random(11)
    for _, fol in synth_items[:120]:
        g = flatten(parse_fol(fol))
        p = flatten(load_formula(mutate(linearize(parse_fol(fol)).text(), rng)))
        assert align_exhaustive(g, p)[1] >= align_greedy(g, p)[1]


def test_exhaustive_is_symmetric():
    for g, p in _tiny_pairs(5, 40):
        gf, pf = flatten(load_formula(g)), flatten(load_formula(p))
        assert align_exhaustive(gf, pf)[1] == align_exhaustive(pf, gf)[1]


@given(formulas(max_depth=2), st.randoms(use_true_random=False))
@settings(max_examples=60, deadline=None)
def test_alpha_invariance_property(f, rnd):
    ts = linearize(f, max_len=None)
    letters = sorted({t for t, c in zip(ts.tokens, ts.categories) if c.value == "V"})
    perm = dict(zip(letters, rnd.sample(letters, len(letters))))
    renamed = " ".join(perm.get(t, t) for t in ts.tokens)
    assert score(f, renamed).f1 == 1.0


def test_bucket_of():
    assert [bucket_of(n) for n in (1, 5, 6, 10, 11, 16, 20, 21, 99)] == [
        "1-5", "1-5", "6-10", "6-10", "11-15", "16-20", "16-20", "21+", "21+"]
    assert len(LENGTH_BUCKETS) == 5


def test_corpus_micro_average_and_buckets():
    items = [(WORKED_FOL, WORKED_MAPPING), (WORKED_FOL, None)]
    rep = score_corpus(items, lengths=[3, 12])
    assert rep.matched == 19 and rep.gold_total == 38 and rep.pred_total == 19
    assert rep.precision == 1.0 and rep.recall == 0.5
    assert rep.f1 == pytest.approx(2 / 3)
    assert rep.accuracy == 0.5
    assert rep.buckets["1-5"]["f1"] == 1.0 and rep.buckets["11-15"]["f1"] == 0.0
    assert set(rep.buckets) == {"1-5", "11-15"}


def test_empty_predictions_have_zero_recall():
    rep = score_corpus([(WORKED_FOL, "")] * 3)
    assert rep.recall == 0.0 and rep.f1 == 0.0


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        score_corpus([])


def test_greedy_scope_map_follows_variable_map():
    # the unused gold variable A shifts every variable index by one, so the
    # variable map is not the identity; sibling negations must still pair up
    gold = load_formula("fol(1,and(some(A,some(B,r1agent(B,B))),and(not(some(D,and(a1small(D),"
                        "n1man(D)))),some(E,not(and(a1small(E),n1dog(E)))))))")
    pred = load_formula("fol( r1agent B B not( a1small D n1man D ) not( a1small E n1dog E ) )")
    g, p = flatten(gold), flatten(pred)
    assert g.n_vars == p.n_vars + 1
    assert align_greedy(g, p)[1] == align_exhaustive(g, p)[1] == g.n_pairs() == p.n_pairs()
    assert score(gold, pred).f1 == 1.0
