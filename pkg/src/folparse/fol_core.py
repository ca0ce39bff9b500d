"""Boxer-style first-order logic terms: AST, parser, printer, normalization.

The accepted fragment is the one Boxer emits for simple sentences::

    fol(1,some(A,and(n1man(A),not(some(B,and(v1sleep(B),r1agent(B,A)))))))

Variables are compared by binder, never by letter.  Conjunctions are stored
n-ary (flattened on parse) and re-binarized right-associatively on print.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union

__all__ = [
    "TopLevel", "Exists", "ForAll", "And", "Not", "Pred", "Formula",
    "FOLSyntaxError", "UnboundVariable", "Violation", "ValidationReport",
    "parse_fol", "print_fol", "normalize_universal", "validate",
    "alpha_equivalent", "canonical_letter", "iter_preds", "free_variables",
]

RESERVED = frozenset({"some", "all", "and", "not", "fol"})
_PRED_RE = re.compile(r"[a-z0-9_]+")
_VAR_RE = re.compile(r"[A-Z][0-9]*")


@dataclass(frozen=True)
class Pred:
    name: str
    args: tuple[str, ...]


@dataclass(frozen=True)
class Not:
    body: "Formula"


@dataclass(frozen=True)
class And:
    conjuncts: tuple["Formula", ...]


@dataclass(frozen=True)
class Exists:
    var: str
    body: "Formula"


@dataclass(frozen=True)
class ForAll:
    var: str
    body: "Formula"


@dataclass(frozen=True)
class TopLevel:
    id: int
    body: "Formula"


Formula = Union[TopLevel, Exists, ForAll, And, Not, Pred]


class FOLSyntaxError(ValueError):
    """Malformed FOL text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnboundVariable(ValueError):
    def __init__(self, name: str):
        super().__init__(f"unbound variable {name}")
        self.name = name


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(r"\s*(?:([A-Za-z0-9_]+)|(\()|(\))|(,)|(\.))")


def _tokenize(text: str) -> list[tuple[str, int]]:
    toks = []
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise FOLSyntaxError(f"unexpected character {text[bad]!r}", _byte_offset(text, bad))
        if m.lastindex is None:
            break
        start = m.start(m.lastindex)
        toks.append((m.group(m.lastindex), start))
        pos = m.end()
    return toks


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def _offset(self) -> int:
        if self.i < len(self.toks):
            return _byte_offset(self.text, self.toks[self.i][1])
        return len(self.text.encode("utf-8"))

    def _peek(self) -> str | None:
        return self.toks[self.i][0] if self.i < len(self.toks) else None

    def _expect(self, tok: str) -> None:
        got = self._peek()
        if got != tok:
            what = "end of input" if got is None else repr(got)
            raise FOLSyntaxError(f"expected {tok!r}, found {what}", self._offset())
        self.i += 1

    def _word(self) -> str:
        got = self._peek()
        if got is None or got in "(),.":
            what = "end of input" if got is None else repr(got)
            raise FOLSyntaxError(f"expected a name, found {what}", self._offset())
        self.i += 1
        return got

    def _var(self) -> str:
        off = self._offset()
        w = self._word()
        if not _VAR_RE.fullmatch(w):
            raise FOLSyntaxError(f"expected a variable, found {w!r}", off)
        return w

    def top(self) -> TopLevel:
        off = self._offset()
        if self._word() != "fol":
            raise FOLSyntaxError("expected 'fol'", off)
        self._expect("(")
        off = self._offset()
        num = self._word()
        if not num.isdigit():
            raise FOLSyntaxError(f"expected an integer id, found {num!r}", off)
        self._expect(",")
        body = self.body()
        self._expect(")")
        if self._peek() == ".":
            self.i += 1
        if self._peek() is not None:
            raise FOLSyntaxError("trailing input", self._offset())
        return TopLevel(int(num), body)

    def body(self) -> Formula:
        off = self._offset()
        head = self._peek()
        if head == "(":
            raise FOLSyntaxError("empty predicate name", off)
        head = self._word()
        self._expect("(")
        if head in ("some", "all"):
            var = self._var()
            self._expect(",")
            inner = self.body()
            self._expect(")")
            return Exists(var, inner) if head == "some" else ForAll(var, inner)
        if head == "and":
            left = self.body()
            self._expect(",")
            right = self.body()
            self._expect(")")
            parts: list[Formula] = []
            for c in (left, right):
                parts.extend(c.conjuncts if isinstance(c, And) else (c,))
            return And(tuple(parts))
        if head == "not":
            inner = self.body()
            self._expect(")")
            return Not(inner)
        if head in RESERVED or not _PRED_RE.fullmatch(head):
            raise FOLSyntaxError(f"bad predicate name {head!r}", off)
        args = [self._var()]
        if self._peek() == ",":
            self.i += 1
            args.append(self._var())
        self._expect(")")
        return Pred(head, tuple(args))


def parse_fol(text: str) -> TopLevel:
    """Parse ``fol(<int>,<body>)``; a trailing ``.`` (Boxer's clause end) is allowed."""
    f = _Parser(text).top()
    free = free_variables(f)
    if free:
        raise UnboundVariable(free[0])
    return f


def free_variables(f: Formula) -> list[str]:
    """Free variable labels in first-occurrence order."""
    out: list[str] = []

    def walk(node, bound):
        if isinstance(node, Pred):
            for a in node.args:
                if a not in bound and a not in out:
                    out.append(a)
        elif isinstance(node, (Exists, ForAll)):
            walk(node.body, bound | {node.var})
        elif isinstance(node, And):
            for c in node.conjuncts:
                walk(c, bound)
        else:
            walk(node.body, bound)

    walk(f, frozenset())
    return out


# ---------------------------------------------------------------------------
# printing

def canonical_letter(i: int) -> str:
    """A..Z, then A1, A2, ..."""
    if i < 26:
        return chr(ord("A") + i)
    return f"A{i - 25}"


def print_fol(f: Formula) -> str:
    """Canonical Boxer text; variables renamed A, B, ... in binder order."""
    counter = [0]

    def emit(node, env) -> str:
        if isinstance(node, TopLevel):
            return f"fol({node.id},{emit(node.body, env)})"
        if isinstance(node, (Exists, ForAll)):
            letter = canonical_letter(counter[0])
            counter[0] += 1
            q = "some" if isinstance(node, Exists) else "all"
            return f"{q}({letter},{emit(node.body, {**env, node.var: letter})})"
        if isinstance(node, And):
            parts = [emit(c, env) for c in node.conjuncts]
            if not parts:
                raise ValueError("empty conjunction cannot be printed")
            out = parts[-1]
            for p in reversed(parts[:-1]):
                out = f"and({p},{out})"
            return out
        if isinstance(node, Not):
            return f"not({emit(node.body, env)})"
        return f"{node.name}({','.join(env.get(a, a) for a in node.args)})"

    return emit(f, {})


# ---------------------------------------------------------------------------
# normalization and comparison

def normalize_universal(f: Formula) -> Formula:
    """Rewrite every ``all(V, p)`` as ``not(some(V, not(p)))``."""
    if isinstance(f, TopLevel):
        return TopLevel(f.id, normalize_universal(f.body))
    if isinstance(f, ForAll):
        return Not(Exists(f.var, Not(normalize_universal(f.body))))
    if isinstance(f, Exists):
        return Exists(f.var, normalize_universal(f.body))
    if isinstance(f, And):
        return And(tuple(normalize_universal(c) for c in f.conjuncts))
    if isinstance(f, Not):
        return Not(normalize_universal(f.body))
    return f


def alpha_equivalent(f: Formula, g: Formula) -> bool:
    """Structural equality up to consistent renaming of bound variables."""

    def eq(a, b, env_a, env_b, depth) -> bool:
        if type(a) is not type(b):
            return False
        if isinstance(a, TopLevel):
            return a.id == b.id and eq(a.body, b.body, env_a, env_b, depth)
        if isinstance(a, (Exists, ForAll)):
            return eq(a.body, b.body, {**env_a, a.var: depth}, {**env_b, b.var: depth}, depth + 1)
        if isinstance(a, And):
            return len(a.conjuncts) == len(b.conjuncts) and all(
                eq(x, y, env_a, env_b, depth) for x, y in zip(a.conjuncts, b.conjuncts))
        if isinstance(a, Not):
            return eq(a.body, b.body, env_a, env_b, depth)
        if a.name != b.name or len(a.args) != len(b.args):
            return False
        return all(env_a.get(x, ("free", x)) == env_b.get(y, ("free", y))
                   for x, y in zip(a.args, b.args))

    return eq(f, g, {}, {}, 0)


def iter_preds(f: Formula) -> Iterator[Pred]:
    if isinstance(f, Pred):
        yield f
    elif isinstance(f, And):
        for c in f.conjuncts:
            yield from iter_preds(c)
    else:
        yield from iter_preds(f.body)


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Violation:
    kind: str  # UnboundVariable | ArityConflict | ResidualForAll | DuplicateBinder | BadArity | EmptyAnd
    path: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def __bool__(self) -> bool:
        return not self.violations

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> list[str]:
        return [v.kind for v in self.violations]


def validate(f: Formula, normalized: bool = True) -> ValidationReport:
    """Collect every invariant violation; ``normalized`` also flags ForAll nodes."""
    report = ValidationReport()
    arities: dict[str, int] = {}
    binders: set[str] = set()

    def add(kind, path, detail):
        report.violations.append(Violation(kind, path, detail))

    def walk(node, bound, path):
        if isinstance(node, TopLevel):
            walk(node.body, bound, path + "/fol")
        elif isinstance(node, (Exists, ForAll)):
            tag = "some" if isinstance(node, Exists) else "all"
            if isinstance(node, ForAll) and normalized:
                add("ResidualForAll", path, f"all({node.var},...)")
            if node.var in binders:
                add("DuplicateBinder", path, f"{node.var} bound more than once")
            binders.add(node.var)
            walk(node.body, bound | {node.var}, f"{path}/{tag}({node.var})")
        elif isinstance(node, And):
            if not node.conjuncts:
                add("EmptyAnd", path, "conjunction without conjuncts")
            for k, c in enumerate(node.conjuncts):
                walk(c, bound, f"{path}/and[{k}]")
        elif isinstance(node, Not):
            walk(node.body, bound, path + "/not")
        else:
            here = f"{path}/{node.name}"
            if len(node.args) not in (1, 2):
                add("BadArity", here, f"{node.name} has {len(node.args)} arguments")
            prev = arities.setdefault(node.name, len(node.args))
            if prev != len(node.args):
                add("ArityConflict", here, f"{node.name} used with arity {prev} and {len(node.args)}")
            for a in node.args:
                if a not in bound:
                    add("UnboundVariable", here, a)

    walk(f, frozenset(), "")
    return report
