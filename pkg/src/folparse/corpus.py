"""Sentence/FOL corpora: vocabularies, encoding, perturbation, synthesis."""

from __future__ import annotations

import hashlib
import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field, replace

from .fol_core import (And, Exists, Formula, Not, Pred, TopLevel, normalize_universal,
                       parse_fol, print_fol, validate)
from .linearizer import (MAX_OUTPUT_LEN, SCOPE_TOKENS, AlignTarget, Category,
                         TokenSequence, alignment_targets, linearize,
                         relabel_by_first_use)

__all__ = [
    "MAX_INPUT_LEN", "VARIABLE_LETTERS", "NEW_VARIABLE", "UNK", "START",
    "Vocab", "Vocabs", "Example", "EmptyCorpus", "LengthExceeded",
    "tokenize_sentence", "prepare_example", "build_vocabs", "encode_example",
    "perturb_variables", "GeneratorProfile", "synth_corpus", "split_corpus",
    "read_jsonl", "write_jsonl", "read_boxer_lines",
]

MAX_INPUT_LEN = 100
VARIABLE_LETTERS = tuple(chr(ord("A") + i) for i in range(26))
NEW_VARIABLE = "<new>"
UNK = "<unk>"
START = "<start>"
CATEGORY_TOKENS = (Category.U.value, Category.B.value, Category.V.value, Category.S.value, START)


class EmptyCorpus(ValueError):
    pass


class LengthExceeded(ValueError):
    pass


_WORD_RE = re.compile(r"[a-z0-9_']+|[^\w\s]")


def tokenize_sentence(sentence: str) -> list[str]:
    """Lowercase; split on whitespace and punctuation (punctuation kept)."""
    return _WORD_RE.findall(sentence.lower())


# ---------------------------------------------------------------------------
# vocabularies

class Vocab:
    def __init__(self, name: str, tokens, unk: str | None = UNK):
        self.name = name
        self.unk = unk
        items = ([unk] if unk is not None else []) + [t for t in tokens if t != unk]
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        for t in items:
            if t not in self.stoi:
                self.stoi[t] = len(self.itos)
                self.itos.append(t)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def index(self, tok: str) -> int:
        if tok in self.stoi:
            return self.stoi[tok]
        if self.unk is None:
            raise KeyError(f"{tok!r} not in closed vocabulary {self.name}")
        return self.stoi[self.unk]

    def token(self, i: int) -> str:
        return self.itos[i]

    def dumps(self) -> str:
        return f"# {self.name}\n" + "".join(t + "\n" for t in self.itos)

    @classmethod
    def loads(cls, text: str) -> "Vocab":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# "):
            raise ValueError("vocabulary file lacks its '# <category>' header")
        name = lines[0][2:].strip()
        toks = lines[1:]
        unk = UNK if toks and toks[0] == UNK else None
        return cls(name, toks, unk=unk)


@dataclass
class Vocabs:
    input: Vocab
    unary: Vocab
    binary: Vocab
    variable: Vocab
    scope: Vocab
    category: Vocab
    joint: Vocab

    NAMES = ("input", "unary", "binary", "variable", "scope", "category", "joint")

    def of_category(self, cat: Category) -> Vocab:
        return {Category.U: self.unary, Category.B: self.binary,
                Category.V: self.variable, Category.S: self.scope}[cat]

    def digest(self) -> str:
        h = hashlib.sha256()
        for n in self.NAMES:
            h.update(getattr(self, n).dumps().encode("utf-8"))
        return h.hexdigest()

    def save(self, directory) -> None:
        from pathlib import Path
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for n in self.NAMES:
            (d / f"{n}.vocab").write_text(getattr(self, n).dumps(), encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "Vocabs":
        from pathlib import Path
        d = Path(directory)
        return cls(**{n: Vocab.loads((d / f"{n}.vocab").read_text(encoding="utf-8")) for n in cls.NAMES})

    def to_json(self) -> dict:
        return {n: getattr(self, n).dumps() for n in self.NAMES}

    @classmethod
    def from_json(cls, blob: dict) -> "Vocabs":
        return cls(**{n: Vocab.loads(blob[n]) for n in cls.NAMES})


# ---------------------------------------------------------------------------
# examples

@dataclass
class Example:
    sentence: list[str]
    target: TokenSequence
    align: list[AlignTarget | None]
    fol: str = ""
    src: list[int] = field(default_factory=list)
    tgt_cat: list[int] = field(default_factory=list)
    tgt_idx: list[int] = field(default_factory=list)
    tgt_joint: list[int] = field(default_factory=list)


def prepare_example(sentence: str | list[str], fol_text: str, max_input_len: int = MAX_INPUT_LEN,
                    max_output_len: int = MAX_OUTPUT_LEN, align_mode: str = "earliest",
                    relabel: bool = True) -> Example:
    """Build a training example.  With ``relabel`` the target letters follow
    first use, matching the decoder's lowest-unused-letter rule for new
    variables."""
    toks = tokenize_sentence(sentence) if isinstance(sentence, str) else list(sentence)
    if len(toks) > max_input_len:
        raise LengthExceeded(f"sentence has {len(toks)} tokens (limit {max_input_len})")
    f = normalize_universal(parse_fol(fol_text))
    ts = linearize(f, max_output_len)
    if relabel:
        ts = relabel_by_first_use(ts)
    align = alignment_targets(ts, align_mode)
    ts.align = align
    return Example(toks, ts, align, fol=fol_text)


def build_vocabs(corpus: list[Example], min_freq: int = 2) -> Vocabs:
    if not corpus:
        raise EmptyCorpus("cannot build vocabularies from an empty corpus")
    words = Counter()
    unary: list[str] = []
    binary: list[str] = []
    seen_u: set[str] = set()
    seen_b: set[str] = set()
    for ex in corpus:
        words.update(ex.sentence)
        for tok, cat in zip(ex.target.tokens, ex.target.categories):
            if cat == Category.U and tok not in seen_u:
                seen_u.add(tok)
                unary.append(tok)
            elif cat == Category.B and tok not in seen_b:
                seen_b.add(tok)
                binary.append(tok)
    clash = seen_u & seen_b
    if clash:
        raise ValueError(f"predicates used as both unary and binary: {sorted(clash)}")
    order = {}
    for ex in corpus:
        for w in ex.sentence:
            order.setdefault(w, len(order))
    inputs = [w for w in order if words[w] >= min_freq]
    variable = Vocab("variable", (NEW_VARIABLE,) + VARIABLE_LETTERS, unk=None)
    scope = Vocab("scope", SCOPE_TOKENS, unk=None)
    category = Vocab("category", CATEGORY_TOKENS, unk=None)
    joint = Vocab("joint", list(SCOPE_TOKENS) + list(VARIABLE_LETTERS) + unary + binary)
    return Vocabs(Vocab("input", inputs), Vocab("unary", unary), Vocab("binary", binary),
                  variable, scope, category, joint)


def index_example(ex: Example, v: Vocabs) -> Example:
    ex.src = [v.input.index(w) for w in ex.sentence]
    ex.tgt_cat = [v.category.index(c.value) for c in ex.target.categories]
    ex.tgt_idx = [v.of_category(c).index(t) for t, c in zip(ex.target.tokens, ex.target.categories)]
    ex.tgt_joint = [v.joint.index(t) for t in ex.target.tokens]
    return ex


def encode_example(sentence: str | list[str], fol_text: str, v: Vocabs, **kw) -> Example:
    """Tokenize, linearize, attach alignment targets and vocabulary indices.
    Out-of-vocabulary predicates map to UNK; unknown variable letters raise."""
    return index_example(prepare_example(sentence, fol_text, **kw), v)


def perturb_variables(e: Example, rng: random.Random, v: Vocabs | None = None,
                      permutation: dict[str, str] | None = None) -> Example:
    """Rename target variables by a random permutation of the variable letters.

    Categories, predicates, scopes and alignment targets are left as they are.
    """
    if permutation is None:
        letters = list(VARIABLE_LETTERS)
        shuffled = letters[:]
        rng.shuffle(shuffled)
        permutation = dict(zip(letters, shuffled))
    toks = [permutation.get(t, t) if c == Category.V else t
            for t, c in zip(e.target.tokens, e.target.categories)]
    ts = TokenSequence(toks, list(e.target.categories), list(e.align), e.target.unclosed)
    out = replace(e, target=ts, align=list(e.align))
    if v is not None:
        index_example(out, v)
    return out


# ---------------------------------------------------------------------------
# synthetic corpora

_NOUNS = ("man", "woman", "boy", "girl", "dog", "cat", "child", "horse", "player", "worker",
          "bike", "ball", "car", "hat", "guitar", "book", "street", "park", "beach", "field",
          "table", "bench", "wall", "river")
_PLURAL = {"man": "men", "woman": "women", "child": "children"}
_ADJS = ("young", "old", "red", "blue", "small", "big", "happy", "tall", "black", "white")
_INTRANS = ("sleep", "run", "walk", "sit", "stand", "smile", "jump", "swim", "dance", "wait")
_TRANS = ("ride", "hold", "eat", "throw", "watch", "carry", "kick", "read", "wear", "push")
_PREPS = ("in", "on", "near", "by", "with", "behind")
_NUMBERS = {2: "two", 3: "three", 4: "four", 5: "five"}


def _ing(verb: str) -> str:
    irregular = {"run": "running", "sit": "sitting", "swim": "swimming", "lie": "lying"}
    if verb in irregular:
        return irregular[verb]
    if verb.endswith("e") and verb not in ("see",):
        return verb[:-1] + "ing"
    return verb + "ing"


def _plural(noun: str) -> str:
    if noun in _PLURAL:
        return _PLURAL[noun]
    return noun + ("es" if noun.endswith(("s", "sh", "ch")) else "s")


@dataclass(frozen=True)
class GeneratorProfile:
    """Knobs for ``synth_corpus``; probabilities are per sentence."""

    min_entities: int = 1
    max_entities: int = 4
    max_neg_depth: int = 2
    p_adjective: float = 0.35
    p_number: float = 0.2
    p_coordination: float = 0.2
    p_object: float = 0.5
    p_pp: float = 0.4
    p_negation: float = 0.3
    max_output_len: int = MAX_OUTPUT_LEN
    max_variables: int = 8

    @classmethod
    def named(cls, name: str) -> "GeneratorProfile":
        presets = {
            "default": cls(),
            "simple": cls(max_entities=1, max_neg_depth=0, p_adjective=0.0, p_number=0.0,
                          p_coordination=0.0, p_object=0.0, p_pp=0.0, p_negation=0.0),
            "nested": cls(min_entities=1, max_entities=2, p_negation=1.0, max_neg_depth=2),
            "ablation": cls(p_coordination=0.3, p_negation=0.4),
        }
        if name not in presets:
            raise ValueError(f"unknown profile {name!r}; choose from {sorted(presets)}")
        return presets[name]


class _Fresh:
    def __init__(self):
        self.n = 0

    def __call__(self) -> str:
        self.n += 1
        return f"X{self.n}"


def _np(rng: random.Random, prof: GeneratorProfile, nouns, fresh: _Fresh, allow_number=True):
    """Return (words, var, preds, extra_vars) for a noun phrase."""
    noun = rng.choice(nouns)
    var = fresh()
    preds: list[Pred] = []
    extra: list[str] = []
    words: list[str] = []
    adj = rng.choice(_ADJS) if rng.random() < prof.p_adjective else None
    num = rng.choice(sorted(_NUMBERS)) if allow_number and rng.random() < prof.p_number else None
    if num is not None:
        nv = fresh()
        extra.append(nv)
        words.append(_NUMBERS[num])
        if adj:
            words.append(adj)
        words.append(_plural(noun))
        preds.append(Pred(f"n1{noun}", (var,)))
        if adj:
            preds.append(Pred(f"a1{adj}", (var,)))
        preds += [Pred("card", (var, nv)), Pred(f"c{num}number", (nv,)), Pred("n1numeral", (nv,))]
    else:
        words.append("a")
        if adj:
            words.append(adj)
        words.append(noun)
        preds.append(Pred(f"n1{noun}", (var,)))
        if adj:
            preds.append(Pred(f"a1{adj}", (var,)))
    return words, var, preds, extra, num is not None


def _wrap(vars_: list[str], parts: list[Formula]) -> Formula:
    body: Formula = parts[0] if len(parts) == 1 else And(tuple(parts))
    for v in reversed(vars_):
        body = Exists(v, body)
    return body


def _scene(rng: random.Random, prof: GeneratorProfile):
    fresh = _Fresh()
    animate = _NOUNS[:10]
    things = _NOUNS[10:17]
    places = _NOUNS[17:]
    n_entities = rng.randint(prof.min_entities, prof.max_entities)

    # subject
    subj_vars: list[str] = []
    subj_preds: list[Formula] = []
    plural = False
    if n_entities >= 2 and rng.random() < prof.p_coordination:
        w1, v1, p1, x1, _ = _np(rng, prof, animate, fresh, allow_number=False)
        w2, v2, p2, x2, _ = _np(rng, prof, animate, fresh, allow_number=False)
        group = fresh()
        subj_words = w1 + ["and"] + w2
        subj_vars = [v1] + x1 + [v2] + x2 + [group]
        subj_preds = p1 + p2 + [Pred("subset_of", (v1, group)), Pred("subset_of", (v2, group))]
        subj = group
        plural = True
        used = 2
    else:
        subj_words, subj, p, x, plural = _np(rng, prof, animate, fresh)
        subj_vars = [subj] + x
        subj_preds = list(p)
        used = 1

    event = fresh()
    transitive = used < n_entities and rng.random() < prof.p_object
    verb = rng.choice(_TRANS if transitive else _INTRANS)
    ev_preds: list[Formula] = [Pred(f"v1{verb}", (event,)), Pred("r1agent", (event, subj))]
    ev_vars = [event]
    tail_words: list[str] = []
    if transitive:
        ow, ov, op, ox, _ = _np(rng, prof, things + animate, fresh)
        ev_vars += [ov] + ox
        ev_preds += op + [Pred("r1theme", (event, ov))]
        tail_words += ow
        used += 1
    if used < n_entities and rng.random() < prof.p_pp:
        prep = rng.choice(_PREPS)
        pw, pv, pp, px, _ = _np(rng, prof, places + things, fresh, allow_number=False)
        ev_vars += [pv] + px
        ev_preds += pp + [Pred(f"r1{prep}", (event, pv))]
        tail_words += [prep] + ["the"] + pw[1:]
        used += 1

    be = "are" if plural else "is"
    neg = "none"
    if prof.max_neg_depth >= 1 and rng.random() < prof.p_negation:
        choices = ["not_vp"]
        if not plural:
            choices.append("no_subj")
            if prof.max_neg_depth >= 2:
                choices.append("every_subj")
        neg = rng.choice(choices)

    if neg == "none":
        body = _wrap(subj_vars, subj_preds + [_wrap(ev_vars, ev_preds)])
        words = subj_words + [be, _ing(verb)] + tail_words
    elif neg == "not_vp":
        body = _wrap(subj_vars, subj_preds + [Not(_wrap(ev_vars, ev_preds))])
        words = subj_words + [be, "not", _ing(verb)] + tail_words
    elif neg == "no_subj":
        body = Not(_wrap(subj_vars, subj_preds + [_wrap(ev_vars, ev_preds)]))
        words = ["no"] + subj_words[1:] + [be, _ing(verb)] + tail_words
    else:
        body = Not(_wrap(subj_vars, subj_preds + [Not(_wrap(ev_vars, ev_preds))]))
        words = ["every"] + subj_words[1:] + [be, _ing(verb)] + tail_words
    return " ".join(words), TopLevel(1, body)


def synth_corpus(rng: random.Random, count: int, profile: GeneratorProfile | None = None) -> list[tuple[str, str]]:
    """Seeded synthetic (sentence, fol) pairs in the existential-conjunctive
    fragment with negation.  Every item validates and fits the profile's
    output length."""
    prof = profile or GeneratorProfile()
    if prof.max_variables > len(VARIABLE_LETTERS) or prof.max_neg_depth > 2:
        raise ValueError("profile exceeds generator bounds")
    out = []
    while len(out) < count:
        sentence, f = _scene(rng, prof)
        text = print_fol(f)
        canon = parse_fol(text)
        n_vars = text.count("some(")
        if n_vars > prof.max_variables:
            continue
        if len(linearize(canon, None)) > prof.max_output_len:
            continue
        out.append((sentence, text))
    return out


def split_corpus(items: list[tuple[str, str]], sizes: tuple[int, ...], rng: random.Random):
    """Disjoint-by-sentence splits of the requested sizes (duplicates dropped)."""
    seen: set[str] = set()
    uniq = []
    for s, f in items:
        if s not in seen:
            seen.add(s)
            uniq.append((s, f))
    if sum(sizes) > len(uniq):
        raise ValueError(f"need {sum(sizes)} distinct sentences, have {len(uniq)}")
    rng.shuffle(uniq)
    out, k = [], 0
    for n in sizes:
        out.append(uniq[k:k + n])
        k += n
    return out


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_boxer_lines(path) -> list[dict]:
    """Raw Boxer output: one ``fol(...)`` term per line, optionally preceded
    by ``sentence<TAB>``; ``%`` comment lines are skipped."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("%"):
                continue
            if "\t" in line:
                sentence, fol = line.split("\t", 1)
            else:
                sentence, fol = "", line
            rows.append({"sentence": sentence.strip(), "fol": fol.strip(), "line": lineno})
    return rows
