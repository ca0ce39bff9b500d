"""Flatten FOL trees into token sequences and back.

Within one scope the order is: unary predicates (each followed by its
variable), binary predicates (each followed by two variables), then nested
``not(`` scopes.  Existential quantifiers are erased; ``delinearize``
re-binds each variable at the innermost scope enclosing all of its uses.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

from .fol_core import And, Exists, ForAll, Formula, Not, Pred, TopLevel, canonical_letter

__all__ = [
    "Category", "AlignTarget", "TokenSequence", "CapacityExceeded",
    "MalformedSequence", "SCOPE_OPEN_TOP", "SCOPE_OPEN_NOT", "SCOPE_CLOSE",
    "MAX_OUTPUT_LEN", "linearize", "delinearize", "alignment_targets",
    "from_text", "infer_categories", "is_variable_token", "relabel_by_first_use",
]

SCOPE_OPEN_TOP = "fol("
SCOPE_OPEN_NOT = "not("
SCOPE_CLOSE = ")"
SCOPE_TOKENS = (SCOPE_OPEN_TOP, SCOPE_OPEN_NOT, SCOPE_CLOSE)
MAX_OUTPUT_LEN = 30

_VAR_TOKEN = re.compile(r"[A-Z][0-9]*")


class Category(str, Enum):
    U = "U"
    B = "B"
    V = "V"
    S = "S"


@dataclass(frozen=True)
class AlignTarget:
    decision: int
    position: int | None = None


class CapacityExceeded(ValueError):
    pass


class MalformedSequence(ValueError):
    pass


@dataclass
class TokenSequence:
    tokens: list[str]
    categories: list[Category]
    align: list[AlignTarget | None] = field(default_factory=list)
    unclosed: bool = False

    def __len__(self) -> int:
        return len(self.tokens)

    def text(self) -> str:
        return " ".join(self.tokens)


def is_variable_token(tok: str) -> bool:
    return _VAR_TOKEN.fullmatch(tok) is not None


def linearize(f: Formula, max_len: int | None = MAX_OUTPUT_LEN) -> TokenSequence:
    if not isinstance(f, TopLevel):
        raise TypeError("linearize expects a TopLevel formula")
    tokens: list[str] = []
    cats: list[Category] = []

    def collect(node, unary, binary, scopes):
        if isinstance(node, Exists):
            collect(node.body, unary, binary, scopes)
        elif isinstance(node, And):
            for c in node.conjuncts:
                collect(c, unary, binary, scopes)
        elif isinstance(node, Not):
            scopes.append(node.body)
        elif isinstance(node, Pred):
            (unary if len(node.args) == 1 else binary).append(node)
        elif isinstance(node, ForAll):
            raise ValueError("linearize requires a normalized formula (found all(...))")
        else:
            raise TypeError(f"unexpected node {node!r}")

    def scope(opener, body):
        tokens.append(opener)
        cats.append(Category.S)
        unary, binary, nested = [], [], []
        collect(body, unary, binary, nested)
        for p in unary + binary:
            tokens.append(p.name)
            cats.append(Category.U if len(p.args) == 1 else Category.B)
            tokens.extend(p.args)
            cats.extend([Category.V] * len(p.args))
        for inner in nested:
            scope(SCOPE_OPEN_NOT, inner)
        tokens.append(SCOPE_CLOSE)
        cats.append(Category.S)

    scope(SCOPE_OPEN_TOP, f.body)
    if max_len is not None and len(tokens) > max_len:
        raise CapacityExceeded(f"linearized length {len(tokens)} exceeds {max_len}")
    ts = TokenSequence(tokens, cats)
    ts.align = alignment_targets(ts)
    return ts


def relabel_by_first_use(ts: TokenSequence) -> TokenSequence:
    """Rename variables so that letters appear in order A, B, C, ... of first
    use.  This is an alpha-renaming, so categories and alignment targets are
    unchanged."""
    mapping: dict[str, str] = {}
    toks = []
    for tok, cat in zip(ts.tokens, ts.categories):
        if cat == Category.V:
            tok = mapping.setdefault(tok, canonical_letter(len(mapping)))
        toks.append(tok)
    return TokenSequence(toks, list(ts.categories), list(ts.align), ts.unclosed)


def alignment_targets(ts: TokenSequence, mode: str = "earliest") -> list[AlignTarget | None]:
    """Per-position targets; ``None`` at non-variable positions.

    ``mode`` is ``"earliest"`` (default) or ``"recent"`` (most recent prior
    occurrence), the latter kept for ablation.
    """
    if mode not in ("earliest", "recent"):
        raise ValueError(f"unknown alignment mode {mode!r}")
    seen: dict[str, int] = {}
    out: list[AlignTarget | None] = []
    for i, (tok, cat) in enumerate(zip(ts.tokens, ts.categories)):
        if cat != Category.V:
            out.append(None)
            continue
        if tok in seen:
            out.append(AlignTarget(1, seen[tok]))
            if mode == "recent":
                seen[tok] = i
        else:
            out.append(AlignTarget(0))
            seen[tok] = i
    return out


def infer_categories(tokens: list[str]) -> list[Category]:
    """Categories for a bare token list: predicates take their arity from the
    number of variable tokens that follow them."""
    cats: list[Category] = []
    for i, tok in enumerate(tokens):
        if tok in SCOPE_TOKENS:
            cats.append(Category.S)
        elif is_variable_token(tok):
            cats.append(Category.V)
        else:
            k = 0
            while i + 1 + k < len(tokens) and is_variable_token(tokens[i + 1 + k]):
                k += 1
            cats.append(Category.B if k >= 2 else Category.U)
    return cats


def from_text(line: str) -> TokenSequence:
    tokens = line.split()
    ts = TokenSequence(tokens, infer_categories(tokens))
    ts.align = alignment_targets(ts)
    return ts


class _Scope:
    def __init__(self, parent: "_Scope | None"):
        self.parent = parent
        self.depth = 0 if parent is None else parent.depth + 1
        self.preds: list[Pred] = []
        self.children: list[_Scope] = []


def delinearize(ts: TokenSequence | str, top_id: int = 1) -> TopLevel:
    if isinstance(ts, str):
        ts = from_text(ts)
    toks, cats = ts.tokens, ts.categories
    if len(toks) != len(cats):
        raise MalformedSequence("tokens and categories differ in length")
    if not toks or toks[0] != SCOPE_OPEN_TOP:
        raise MalformedSequence("sequence must start with 'fol('")
    root = _Scope(None)
    cur: _Scope | None = root
    occurs: dict[str, list[_Scope]] = {}
    order: list[str] = []
    i = 1
    n = len(toks)
    while i < n:
        tok, cat = toks[i], cats[i]
        if cur is None:
            raise MalformedSequence(f"tokens after the final ')' at {i}")
        if cat == Category.S:
            if tok == SCOPE_OPEN_NOT:
                child = _Scope(cur)
                cur.children.append(child)
                cur = child
            elif tok == SCOPE_CLOSE:
                if not cur.preds and not cur.children:
                    raise MalformedSequence(f"empty scope closed at {i}")
                cur = cur.parent
            else:
                raise MalformedSequence(f"unexpected scope token {tok!r} at {i}")
            i += 1
        elif cat in (Category.U, Category.B):
            arity = 1 if cat == Category.U else 2
            args = toks[i + 1:i + 1 + arity]
            acats = cats[i + 1:i + 1 + arity]
            if len(args) < arity or any(c != Category.V for c in acats):
                raise MalformedSequence(f"predicate {tok!r} at {i} lacks {arity} variable(s)")
            if is_variable_token(tok) or tok in SCOPE_TOKENS:
                raise MalformedSequence(f"{tok!r} is not a predicate name")
            for a in args:
                if not is_variable_token(a):
                    raise MalformedSequence(f"{a!r} is not a variable")
                if a not in occurs:
                    occurs[a] = []
                    order.append(a)
                occurs[a].append(cur)
            cur.preds.append(Pred(tok, tuple(args)))
            i += 1 + arity
        else:
            raise MalformedSequence(f"variable {tok!r} in non-argument position {i}")
    if cur is not None:
        raise MalformedSequence("unbalanced scopes: sequence ends inside a scope")

    home: dict[int, list[str]] = {}
    for v in order:
        scopes = occurs[v]
        lca = scopes[0]
        for s in scopes[1:]:
            lca = _common_ancestor(lca, s)
        home.setdefault(id(lca), []).append(v)

    def build(s: _Scope) -> Formula:
        parts: list[Formula] = list(s.preds) + [Not(build(c)) for c in s.children]
        body: Formula = parts[0] if len(parts) == 1 else And(tuple(parts))
        for v in reversed(home.get(id(s), [])):
            body = Exists(v, body)
        return body

    return TopLevel(top_id, build(root))


def _common_ancestor(a: _Scope, b: _Scope) -> _Scope:
    while a.depth > b.depth:
        a = a.parent
    while b.depth > a.depth:
        b = b.parent
    while a is not b:
        a, b = a.parent, b.parent
    return a
