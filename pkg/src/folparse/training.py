"""Training loop, decoding and evaluation shared by the CLI commands."""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass, fields

from . import diff_engine as de
from .corpus import (Example, Vocabs, build_vocabs, index_example, perturb_variables,
                     prepare_example)
from .linearizer import TokenSequence
from .metric import CorpusReport, score_corpus
from .model import ModelConfig, Seq2SeqParser, make_batch

__all__ = ["TrainConfig", "ConfigError", "train", "decode_sentences", "evaluate",
           "load_config_file", "prepare_corpus", "save_checkpoint", "load_checkpoint"]


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    variant: str = "sepheads-align"
    seed: int = 0
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    decay: float = 1e-4
    decay_mode: str = "weight"
    clip_norm: float = 5.0
    perturb: bool = False
    perturb_per_epoch: bool = True
    min_freq: int = 2
    align_mode: str = "earliest"
    input_dim: int = 100
    hidden: int = 400
    scope_dim: int = 50
    pred_dim: int = 100
    max_input_len: int = 100
    max_output_len: int = 30
    heads_use_context: bool = True
    init_decoder_from_encoder: bool = True
    eval_every: int = 1
    stop_at_exact: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        for name in ("epochs", "batch_size", "input_dim", "hidden", "scope_dim", "pred_dim",
                     "max_input_len", "max_output_len", "min_freq", "eval_every"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.lr <= 0:
            problems.append("lr must be positive")
        if self.decay < 0:
            problems.append("decay must be non-negative")
        if self.decay_mode not in ("weight", "lr"):
            problems.append("decay_mode must be 'weight' or 'lr'")
        if self.align_mode not in ("earliest", "recent"):
            problems.append("align_mode must be 'earliest' or 'recent'")
        try:
            self.model_config()
        except ValueError as exc:
            problems.append(str(exc))
        if problems:
            raise ConfigError("; ".join(problems))

    def model_config(self) -> ModelConfig:
        return ModelConfig(variant=self.variant, input_dim=self.input_dim, hidden=self.hidden,
                           max_input_len=self.max_input_len, max_output_len=self.max_output_len,
                           scope_dim=self.scope_dim, pred_dim=self.pred_dim,
                           heads_use_context=self.heads_use_context,
                           init_decoder_from_encoder=self.init_decoder_from_encoder, seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "TrainConfig":
        d = self.to_dict()
        d.update(kw)
        return TrainConfig(**d)


def _coerce(field_type, raw: str):
    t = field_type if isinstance(field_type, str) else field_type.__name__
    if t == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    return raw


def load_config_file(path, overrides: dict | None = None) -> TrainConfig:
    """``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, raw = (s.strip() for s in line.split("=", 1))
                if key not in types:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                try:
                    values[key] = _coerce(types[key], raw)
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: {exc}") from None
    for k, val in (overrides or {}).items():
        if val is not None:
            if k not in types:
                raise ConfigError(f"unknown setting {k!r}")
            values[k] = val
    return TrainConfig(**values)


def prepare_corpus(rows, config: TrainConfig, vocabs: Vocabs | None = None):
    """Rows of {sentence, fol} -> (indexed examples, vocabs)."""
    exs = [prepare_example(r["sentence"], r["fol"], config.max_input_len, config.max_output_len,
                           config.align_mode) for r in rows]
    if vocabs is None:
        vocabs = build_vocabs(exs, min_freq=config.min_freq)
    return [index_example(e, vocabs) for e in exs], vocabs


# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    losses: dict
    train_exact: float | None = None
    dev_f1: float | None = None
    dev_accuracy: float | None = None


def train(train_ex: list[Example], vocabs: Vocabs, config: TrainConfig,
          dev_ex: list[Example] | None = None, log_fn=None):
    """Train a fresh model.  Returns ``(model, history, best_arrays)`` where
    ``best_arrays`` holds the parameters with the best dev F1 (or the final
    ones without a dev set)."""
    model = Seq2SeqParser(config.model_config(), vocabs)
    opt = de.Adam(model.parameters(), lr=config.lr, decay=config.decay, decay_mode=config.decay_mode)
    rng = random.Random(config.seed)
    history: list[EpochRecord] = []
    best = (-1.0, model.state_arrays())
    terms = model.config.loss_terms()
    fixed_perturbed = None
    if config.perturb and not config.perturb_per_epoch:
        fixed_perturbed = [perturb_variables(e, rng, vocabs) for e in train_ex]
    for epoch in range(1, config.epochs + 1):
        if config.perturb:
            data = fixed_perturbed or [perturb_variables(e, rng, vocabs) for e in train_ex]
        else:
            data = list(train_ex)
        order = list(range(len(data)))
        rng.shuffle(order)
        sums = {k: 0.0 for k in terms + ("total",)}
        batches = 0
        for k in range(0, len(order), config.batch_size):
            batch = make_batch([data[i] for i in order[k:k + config.batch_size]], vocabs)
            lb = model.compute_losses(batch)
            de.backward(lb.total)
            de.clip_grad_norm(model.parameters(), config.clip_norm)
            opt.step()
            for name, val in lb.values().items():
                sums[name] += val
            batches += 1
        rec = EpochRecord(epoch, {k: v / batches for k, v in sums.items()})
        if config.stop_at_exact or (dev_ex is not None and epoch % config.eval_every == 0) \
                or epoch == config.epochs:
            if config.stop_at_exact:
                rec.train_exact = exact_rate(model, train_ex)
            if dev_ex:
                rep = evaluate(model, dev_ex)
                rec.dev_f1, rec.dev_accuracy = rep.f1, rep.accuracy
                if rep.f1 > best[0]:
                    best = (rep.f1, model.state_arrays())
        history.append(rec)
        if log_fn is not None:
            log_fn(rec)
        if config.stop_at_exact and rec.train_exact == 1.0:
            break
    if not dev_ex:
        best = (None, model.state_arrays())
    return model, history, best[1]


def decode_sentences(model: Seq2SeqParser, sentences: list[list[str]]) -> list[TokenSequence]:
    out = []
    for toks in sentences:
        src = [model.vocabs.input.index(w) for w in toks]
        out.append(model.greedy_decode(src))
    return out


def exact_rate(model: Seq2SeqParser, examples: list[Example]) -> float:
    """Fraction of examples decoded to a structurally identical formula."""
    return evaluate(model, examples).accuracy


def evaluate(model: Seq2SeqParser, examples: list[Example], exhaustive: bool = False) -> CorpusReport:
    preds = decode_sentences(model, [e.sentence for e in examples])
    items = [(e.target.text(), p.text() if not p.unclosed else None) for e, p in zip(examples, preds)]
    return score_corpus(items, lengths=[len(e.sentence) for e in examples], exhaustive=exhaustive)


def save_checkpoint(path, model: Seq2SeqParser, extra: dict | None = None) -> None:
    meta = {"model_config": model.config.to_dict(), "vocabs": model.vocabs.to_json(),
            "vocab_digest": model.vocabs.digest()}
    meta.update(extra or {})
    de.save_params(path, model.state_arrays(), meta)


def load_checkpoint(path) -> tuple[Seq2SeqParser, dict]:
    arrays, meta = de.load_params(path)
    vocabs = Vocabs.from_json(meta["vocabs"])
    if vocabs.digest() != meta.get("vocab_digest"):
        raise ValueError(f"{path}: vocabulary digest mismatch")
    model = Seq2SeqParser(ModelConfig.from_dict(meta["model_config"]), vocabs)
    model.load_arrays(arrays)
    return model, meta
