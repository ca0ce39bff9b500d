"""Partial-match scoring of predicted FOL against gold.

A formula decomposes into pairs ``(n1, n2)`` with ``n2`` inside ``n1``:

* ``(scope, predicate)`` for every predicate directly inside a scope,
* ``(scope, scope)`` for every nested ``not(``,
* ``(predicate, variable@k)`` for every argument slot.

Two formulas are aligned by a partial bijection on variables, a
nesting-preserving map on scopes and a name-preserving map on predicate
instances.  The matched count is the number of gold pairs whose aligned
image is a predicted pair.  ``align_greedy`` hill-climbs over variable maps,
``align_exhaustive`` finds the true maximum on small instances.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .fol_core import (And, Exists, ForAll, FOLSyntaxError, Formula, Not, Pred,
                       TopLevel, UnboundVariable, normalize_universal, parse_fol)
from .linearizer import MalformedSequence, delinearize, from_text, linearize, relabel_by_first_use

__all__ = [
    "FlatFormula", "flatten", "PairSet", "decompose_pairs", "Alignment",
    "matched_count", "align_greedy", "align_exhaustive", "InstanceTooLarge",
    "ScoreReport", "CorpusReport", "score", "score_corpus", "load_formula",
    "EmptyCorpus", "LENGTH_BUCKETS", "bucket_of",
]

MAX_EXHAUSTIVE_VARS = 8
MAX_EXHAUSTIVE_SCOPES = 4
LENGTH_BUCKETS = ((1, 5), (6, 10), (11, 15), (16, 20), (21, None))


class InstanceTooLarge(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


@dataclass(frozen=True)
class FlatPred:
    name: str
    scope: int
    args: tuple[int, ...]


@dataclass
class FlatFormula:
    """Index-based view: scope 0 is ``fol(``, variables numbered by binder order."""

    scope_parent: list[int | None]
    var_labels: list[str]
    preds: list[FlatPred]

    @property
    def n_vars(self) -> int:
        return len(self.var_labels)

    @property
    def n_scopes(self) -> int:
        return len(self.scope_parent)

    def children(self, s: int) -> list[int]:
        return [c for c, p in enumerate(self.scope_parent) if p == s]

    def n_pairs(self) -> int:
        return len(self.preds) + (self.n_scopes - 1) + sum(len(p.args) for p in self.preds)


def flatten(f: Formula) -> FlatFormula:
    if not isinstance(f, TopLevel):
        raise TypeError("expected a TopLevel formula")
    f = normalize_universal(f)
    parents: list[int | None] = [None]
    labels: list[str] = []
    preds: list[FlatPred] = []

    def walk(node, scope, env):
        if isinstance(node, (Exists, ForAll)):
            labels.append(node.var)
            walk(node.body, scope, {**env, node.var: len(labels) - 1})
        elif isinstance(node, And):
            for c in node.conjuncts:
                walk(c, scope, env)
        elif isinstance(node, Not):
            parents.append(scope)
            walk(node.body, len(parents) - 1, env)
        elif isinstance(node, Pred):
            preds.append(FlatPred(node.name, scope, tuple(env[a] for a in node.args)))
        else:
            raise TypeError(f"unexpected node {node!r}")

    walk(f.body, 0, {})
    return FlatFormula(parents, labels, preds)


# ---------------------------------------------------------------------------
# pairs

@dataclass(frozen=True)
class EntityRef:
    kind: str  # "scope" | "pred" | "var"
    index: int
    label: str


@dataclass
class PairSet:
    pairs: list[tuple[EntityRef, EntityRef]]

    def __len__(self) -> int:
        return len(self.pairs)

    def kinds(self) -> Counter:
        return Counter((a.kind, b.kind) for a, b in self.pairs)

    def signature(self) -> Counter:
        """Letter-free multiset view, identical for alpha-equivalent formulas
        only up to variable identities (used in tests)."""
        return Counter((a.kind, a.label, b.kind, b.label if b.kind != "var" else b.label.split("@")[1])
                       for a, b in self.pairs)


def decompose_pairs(f: Formula | FlatFormula) -> PairSet:
    ff = f if isinstance(f, FlatFormula) else flatten(f)
    scope_ref = [EntityRef("scope", s, "fol" if s == 0 else "not") for s in range(ff.n_scopes)]
    pairs = []
    for s, p in enumerate(ff.scope_parent):
        if p is not None:
            pairs.append((scope_ref[p], scope_ref[s]))
    for i, pr in enumerate(ff.preds):
        pref = EntityRef("pred", i, pr.name)
        pairs.append((scope_ref[pr.scope], pref))
        for k, v in enumerate(pr.args):
            pairs.append((pref, EntityRef("var", v, f"{ff.var_labels[v]}@{k + 1}")))
    return PairSet(pairs)


# ---------------------------------------------------------------------------
# matched count

@dataclass
class Alignment:
    variables: dict[int, int] = field(default_factory=dict)
    scopes: dict[int, int] = field(default_factory=dict)
    predicates: dict[int, int] = field(default_factory=dict)


class _Instance:
    """Precomputed structure shared by both aligners."""

    def __init__(self, gold: FlatFormula, pred: FlatFormula):
        self.g = gold
        self.p = pred
        groups: dict[tuple[str, int], tuple[list[int], list[int]]] = {}
        for i, pr in enumerate(gold.preds):
            groups.setdefault((pr.name, len(pr.args)), ([], []))[0].append(i)
        for j, pr in enumerate(pred.preds):
            key = (pr.name, len(pr.args))
            if key in groups:
                groups[key][1].append(j)
        self.groups = [(gi, pj) for gi, pj in groups.values() if pj]
        self.g_children = [gold.children(s) for s in range(gold.n_scopes)]
        self.p_children = [pred.children(s) for s in range(pred.n_scopes)]
        self.p_local = [Counter() for _ in range(pred.n_scopes)]
        for pr in pred.preds:
            self.p_local[pr.scope][(pr.name, pr.args)] += 1
        # no alignment can match more pairs than the smaller side has
        self.bound = min(gold.n_pairs(), pred.n_pairs())

    def pred_weight(self, gi: int, pj: int, sigma: dict[int, int], tau: dict[int, int]) -> int:
        a = self.g.preds[gi]
        b = self.p.preds[pj]
        w = 1 if tau.get(a.scope) == b.scope else 0
        for x, y in zip(a.args, b.args):
            if sigma.get(x) == y:
                w += 1
        return w

    def count(self, sigma, tau, want_map=False):
        total = len(tau) - 1 if tau else 0
        pmap = {}
        for gi, pj in self.groups:
            if len(gi) == 1 and len(pj) == 1:
                w = self.pred_weight(gi[0], pj[0], sigma, tau)
                total += w
                if want_map and w:
                    pmap[gi[0]] = pj[0]
                continue
            w = np.array([[self.pred_weight(a, b, sigma, tau) for b in pj] for a in gi])
            rows, cols = linear_sum_assignment(w, maximize=True)
            total += int(w[rows, cols].sum())
            if want_map:
                for r, c in zip(rows, cols):
                    if w[r, c]:
                        pmap[gi[r]] = pj[c]
        return (total, pmap) if want_map else total

    # -- scope maps ----------------------------------------------------------

    def best_tau(self, sigma) -> dict[int, int]:
        """Nesting-preserving scope map chosen bottom-up by contained matches."""
        memo: dict[tuple[int, int], tuple[int, dict[int, int]]] = {}

        def local(gs, ps):
            # sigma maps gold -> pred, so pred arguments are used as they are
            have = Counter(self.p_local[ps])
            n = 0
            for pr in self.g.preds:
                if pr.scope != gs:
                    continue
                key = (pr.name, tuple(sigma.get(a, -2) for a in pr.args))
                if have[key] > 0:
                    have[key] -= 1
                    n += 1
            return n

        def best(gs, ps):
            if (gs, ps) in memo:
                return memo[(gs, ps)]
            score = local(gs, ps) + 1
            mapping = {gs: ps}
            gc, pc = self.g_children[gs], self.p_children[ps]
            if gc and pc:
                sub = [[best(a, b) for b in pc] for a in gc]
                w = np.array([[s[0] for s in row] for row in sub], dtype=float)
                rows, cols = linear_sum_assignment(w, maximize=True)
                for r, c in zip(rows, cols):
                    score += sub[r][c][0]
                    mapping.update(sub[r][c][1])
            memo[(gs, ps)] = (score, mapping)
            return memo[(gs, ps)]

        return best(0, 0)[1]

    def all_taus(self):
        """Every nesting-preserving partial injection with root -> root."""

        def embed(gs, ps):
            gc, pc = self.g_children[gs], self.p_children[ps]
            results = [{gs: ps}]
            for assign in _partial_injections(len(gc), len(pc)):
                parts = [{gs: ps}]
                for a, b in assign:
                    parts = [{**base, **sub} for base in parts for sub in embed(gc[a], pc[b])]
                if assign:
                    results.extend(parts)
            return results

        return embed(0, 0)


def _partial_injections(n: int, m: int):
    """All partial injections {0..n-1} -> {0..m-1} as lists of (i, j)."""

    def rec(i, used):
        if i == n:
            yield []
            return
        yield from rec(i + 1, used)
        for j in range(m):
            if j not in used:
                for rest in rec(i + 1, used | {j}):
                    yield [(i, j)] + rest

    yield from rec(0, frozenset())


def matched_count(gold: FlatFormula, pred: FlatFormula, alignment: Alignment) -> int:
    """Matched gold pairs under a fixed variable and scope map."""
    return _Instance(gold, pred).count(alignment.variables, alignment.scopes)


# ---------------------------------------------------------------------------
# greedy hill climbing

def _signatures(ff: FlatFormula) -> list[Counter]:
    sig = [Counter() for _ in range(ff.n_vars)]
    for pr in ff.preds:
        for k, v in enumerate(pr.args):
            sig[v][(pr.name, len(pr.args), k)] += 1
    return sig


def _initial_sigma(g: FlatFormula, p: FlatFormula) -> dict[int, int]:
    gs, ps = _signatures(g), _signatures(p)
    cands = []
    for a in range(g.n_vars):
        for b in range(p.n_vars):
            overlap = sum((gs[a] & ps[b]).values())
            if overlap:
                cands.append((-overlap, a, b))
    cands.sort()
    sigma: dict[int, int] = {}
    used: set[int] = set()
    for _, a, b in cands:
        if a not in sigma and b not in used:
            sigma[a] = b
            used.add(b)
    return sigma


def _climb(inst: _Instance, sigma: dict[int, int]) -> tuple[int, dict[int, int], dict[int, int]]:
    n_g, n_p = inst.g.n_vars, inst.p.n_vars
    tau = inst.best_tau(sigma)
    cur = inst.count(sigma, tau)
    while cur < inst.bound:
        best = (cur, None, None)
        used = set(sigma.values())
        moves = []
        for a in range(n_g):
            for b in range(n_p):
                if b not in used:
                    moves.append({**sigma, a: b})
            for a2 in range(a + 1, n_g):
                if a in sigma or a2 in sigma:
                    s = dict(sigma)
                    x, y = s.pop(a, None), s.pop(a2, None)
                    if y is not None:
                        s[a] = y
                    if x is not None:
                        s[a2] = x
                    moves.append(s)
        for s in moves:
            t = inst.best_tau(s)
            c = inst.count(s, t)
            if c > best[0]:
                best = (c, s, t)
        if best[1] is None:
            break
        cur, sigma, tau = best
    return cur, sigma, tau


def align_greedy(gold: Formula | FlatFormula, pred: Formula | FlatFormula,
                 restarts: int = 4, seed: int = 0) -> tuple[Alignment, int]:
    g = gold if isinstance(gold, FlatFormula) else flatten(gold)
    p = pred if isinstance(pred, FlatFormula) else flatten(pred)
    inst = _Instance(g, p)
    rng = random.Random(seed)
    best = _climb(inst, _initial_sigma(g, p))
    for _ in range(restarts):
        if best[0] == inst.bound:
            break
        targets = list(range(p.n_vars))
        rng.shuffle(targets)
        start = {a: b for a, b in zip(range(g.n_vars), targets)}
        res = _climb(inst, start)
        if res[0] > best[0]:
            best = res
    count, sigma, tau = best
    _, pmap = inst.count(sigma, tau, want_map=True)
    return Alignment(dict(sigma), dict(tau), pmap), count


# ---------------------------------------------------------------------------
# exhaustive oracle

def align_exhaustive(gold: Formula | FlatFormula, pred: Formula | FlatFormula) -> tuple[Alignment, int]:
    """Exact maximum over all variable bijections and scope embeddings.

    Branch-and-bound over variable assignments; the bound relaxes
    predicate-instance injectivity, so pruning never discards an optimum.
    """
    g = gold if isinstance(gold, FlatFormula) else flatten(gold)
    p = pred if isinstance(pred, FlatFormula) else flatten(pred)
    for ff, side in ((g, "gold"), (p, "pred")):
        if ff.n_vars > MAX_EXHAUSTIVE_VARS or ff.n_scopes > MAX_EXHAUSTIVE_SCOPES:
            raise InstanceTooLarge(
                f"{side} has {ff.n_vars} variables and {ff.n_scopes} scopes "
                f"(limits {MAX_EXHAUSTIVE_VARS}, {MAX_EXHAUSTIVE_SCOPES})")
    inst = _Instance(g, p)
    order = sorted(range(g.n_vars), key=lambda v: -sum(v in pr.args for pr in g.preds))
    skips_allowed = max(0, g.n_vars - p.n_vars)

    cands_by_pred = {}
    for gi, pj in inst.groups:
        for a in gi:
            cands_by_pred[a] = pj

    best_count = -1
    best = (None, None)
    for tau in inst.all_taus():
        base = len(tau) - 1

        def bound(sigma):
            total = base
            for a, pr in enumerate(g.preds):
                cands = cands_by_pred.get(a)
                if not cands:
                    continue
                top = 0
                for b in cands:
                    q = p.preds[b]
                    w = 1 if tau.get(pr.scope) == q.scope else 0
                    for x, y in zip(pr.args, q.args):
                        if x in sigma:
                            w += sigma[x] == y
                        else:
                            w += 1
                    top = max(top, w)
                total += top
            return total

        def rec(k, sigma, used, skipped):
            nonlocal best_count, best
            if bound(sigma) <= best_count:
                return
            if k == len(order):
                c = inst.count(sigma, tau)
                if c > best_count:
                    best_count, best = c, (dict(sigma), dict(tau))
                return
            a = order[k]
            for b in range(p.n_vars):
                if b not in used:
                    sigma[a] = b
                    rec(k + 1, sigma, used | {b}, skipped)
                    del sigma[a]
            if skipped < skips_allowed:
                rec(k + 1, sigma, used, skipped + 1)

        rec(0, {}, frozenset(), 0)
    sigma, tau = best
    _, pmap = inst.count(sigma, tau, want_map=True)
    return Alignment(sigma, tau, pmap), best_count


def _brute_force_count(gold: FlatFormula, pred: FlatFormula) -> int:
    """Plain enumeration without pruning; used as a test oracle for the
    branch-and-bound search on tiny instances."""
    inst = _Instance(gold, pred)
    best = 0
    n_g, n_p = gold.n_vars, pred.n_vars
    for tau in inst.all_taus():
        for k in range(min(n_g, n_p) + 1):
            for src in permutations(range(n_g), k):
                for dst in permutations(range(n_p), k):
                    best = max(best, inst.count(dict(zip(src, dst)), tau))
    return best


# ---------------------------------------------------------------------------
# scoring

def load_formula(text: str) -> TopLevel:
    """Parse Boxer FOL text or a space-separated mapping line."""
    stripped = text.strip()
    if stripped.split(" ", 1)[0] == "fol(":
        return normalize_universal(delinearize(stripped))
    return normalize_universal(parse_fol(stripped))


def _canonical_tokens(text: str) -> list[str]:
    """Mapping tokens with variables renamed in order of first use.  A mapping
    line keeps its own token order; Boxer text is linearized first."""
    stripped = text.strip()
    if stripped.split(" ", 1)[0] == "fol(":
        ts = from_text(stripped)
    else:
        ts = linearize(normalize_universal(parse_fol(stripped)), max_len=None)
    return relabel_by_first_use(ts).tokens


def _prf(matched: int, gold_total: int, pred_total: int) -> tuple[float, float, float]:
    p = matched / pred_total if pred_total else 0.0
    r = matched / gold_total if gold_total else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class ScoreReport:
    precision: float
    recall: float
    f1: float
    exact_match: bool
    matched: int
    gold_total: int
    pred_total: int
    string_match: bool = False
    malformed: bool = False


def score(gold, pred, exhaustive: bool = False, seed: int = 0) -> ScoreReport:
    """Score one prediction. ``pred`` may be None or unparsable: it then
    scores zero.  Texts may be Boxer FOL or mapping lines."""
    gold_text = gold if isinstance(gold, str) else None
    pred_text = pred if isinstance(pred, str) else None
    if isinstance(gold, str):
        gold = load_formula(gold)
    gflat = flatten(gold)
    g_total = gflat.n_pairs()
    try:
        if pred is None:
            raise MalformedSequence("no prediction")
        if isinstance(pred, str):
            pred = load_formula(pred)
        pflat = flatten(pred)
    except (FOLSyntaxError, UnboundVariable, MalformedSequence):
        return ScoreReport(0.0, 0.0, 0.0, False, 0, g_total, 0, False, True)
    p_total = pflat.n_pairs()
    same_str = (gold_text is not None and pred_text is not None
                and _canonical_tokens(gold_text) == _canonical_tokens(pred_text))
    if same_str:
        # identical up to renaming: the identity alignment matches everything
        m = g_total
    elif exhaustive:
        _, m = align_exhaustive(gflat, pflat)
    else:
        _, m = align_greedy(gflat, pflat, seed=seed)
    p, r, f = _prf(m, g_total, p_total)
    exact = m == g_total == p_total
    return ScoreReport(p, r, f, exact, m, g_total, p_total, same_str)


def bucket_of(length: int) -> str:
    for lo, hi in LENGTH_BUCKETS:
        if hi is None and length >= lo:
            return f"{lo}+"
        if hi is not None and lo <= length <= hi:
            return f"{lo}-{hi}"
    return f"{LENGTH_BUCKETS[0][0]}-{LENGTH_BUCKETS[0][1]}"


@dataclass
class CorpusReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    string_accuracy: float
    n: int
    matched: int
    gold_total: int
    pred_total: int
    buckets: dict[str, dict] = field(default_factory=dict)
    per_example: list[ScoreReport] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "accuracy": self.accuracy, "string_accuracy": self.string_accuracy,
            "n": self.n, "matched": self.matched, "gold_total": self.gold_total,
            "pred_total": self.pred_total, "buckets": self.buckets,
        }


def score_corpus(items, lengths=None, exhaustive: bool = False, seed: int = 0) -> CorpusReport:
    """Micro-averaged P/R/F1 over ``(gold, pred)`` items plus per input-length
    bucket F1 when ``lengths`` (input token counts) are given."""
    items = list(items)
    if not items:
        raise EmptyCorpus("no examples to score")
    reports = [score(g, p, exhaustive=exhaustive, seed=seed) for g, p in items]
    m = sum(r.matched for r in reports)
    gt = sum(r.gold_total for r in reports)
    pt = sum(r.pred_total for r in reports)
    p, r, f = _prf(m, gt, pt)
    n = len(reports)
    buckets: dict[str, dict] = {}
    if lengths is not None:
        tally: dict[str, list[int]] = {}
        for rep, length in zip(reports, lengths):
            t = tally.setdefault(bucket_of(length), [0, 0, 0, 0, 0])
            t[0] += rep.matched
            t[1] += rep.gold_total
            t[2] += rep.pred_total
            t[3] += 1
            t[4] += rep.exact_match
        for lo, hi in LENGTH_BUCKETS:
            key = f"{lo}+" if hi is None else f"{lo}-{hi}"
            if key in tally:
                bm, bg, bp, bn, be = tally[key]
                bp_, br_, bf_ = _prf(bm, bg, bp)
                buckets[key] = {"n": bn, "precision": bp_, "recall": br_, "f1": bf_,
                                "accuracy": be / bn, "matched": bm, "gold_total": bg,
                                "pred_total": bp}
    return CorpusReport(p, r, f, sum(x.exact_match for x in reports) / n,
                        sum(x.string_match for x in reports) / n, n, m, gt, pt, buckets, reports)
