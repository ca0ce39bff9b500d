"""Finite-difference checks of every loss term on tiny fixed instances."""

from __future__ import annotations

from . import diff_engine as de
from .corpus import build_vocabs, index_example, prepare_example
from .model import ModelConfig, Seq2SeqParser, make_batch

__all__ = ["NOISE_FLOOR", "TINY_CORPUS", "tiny_model", "model_gradcheck"]

# Central differences at eps=1e-5 carry ~1e-11 absolute round-off on these
# losses (one ulp of the loss over 2*eps).  Passing floor=NOISE_FLOOR compares
# entries below it absolutely; the default keeps the plain 1e-8 floor.
NOISE_FLOOR = 1e-6

# shared variables, a binary relation and a negated scope
TINY_CORPUS = (
    ("a man rides a bike",
     "fol(1,some(A,some(B,and(n1man(A),and(v1ride(B),and(n1bike(A),r1agent(B,A)))))))"),
    ("no dog sleeps",
     "fol(1,not(some(A,and(n1dog(A),some(B,and(v1sleep(B),r1agent(B,A)))))))"),
)


def tiny_model(variant: str, seed: int = 0, hidden: int = 4, dim: int = 3):
    exs = [prepare_example(s, f) for s, f in TINY_CORPUS]
    vocabs = build_vocabs(exs, min_freq=1)
    exs = [index_example(e, vocabs) for e in exs]
    cfg = ModelConfig(variant=variant, input_dim=dim, hidden=hidden, scope_dim=dim,
                      pred_dim=dim, seed=seed)
    return Seq2SeqParser(cfg, vocabs), make_batch(exs, vocabs)


def model_gradcheck(variant: str, seed: int = 0, eps: float = 1e-5, tol: float = 1e-4,
                    max_entries: int | None = None,
                    floor: float = 1e-8) -> dict[str, de.GradCheckReport]:
    """One report per active loss term of ``variant``."""
    model, batch = tiny_model(variant, seed)
    params = dict(model.params)
    reports = {}
    for term in model.config.loss_terms():
        def loss_fn(term=term):
            return model.compute_losses(batch).terms[term]
        reports[term] = de.gradient_check(loss_fn, params, eps=eps, tol=tol,
                                          max_entries=max_entries, seed=seed, floor=floor)
    return reports
