"""Multi-seed variant comparisons on a fixed train/test split."""

from __future__ import annotations

import random
import statistics
from dataclasses import dataclass, field

from .corpus import GeneratorProfile, split_corpus, synth_corpus
from .metric import LENGTH_BUCKETS, score_corpus
from .training import TrainConfig, decode_sentences, prepare_corpus, train

__all__ = ["AblationRun", "AblationTable", "ablation_corpus", "run_ablation"]


@dataclass
class AblationRun:
    variant: str
    seed: int
    perturb: bool
    precision: float
    recall: float
    f1: float
    accuracy: float
    buckets: dict
    predictions: list[str] = field(default_factory=list, repr=False)

    @property
    def tag(self) -> str:
        return f"{self.variant}-s{self.seed}" + ("-perturb" if self.perturb else "")


@dataclass
class AblationTable:
    runs: list[AblationRun] = field(default_factory=list)

    def mean(self, variant: str, metric: str = "f1", perturb: bool = False) -> float:
        return statistics.fmean(getattr(r, metric) for r in self.runs
                                if r.variant == variant and r.perturb == perturb)

    def mean_f1(self, variant: str, perturb: bool = False) -> float:
        return self.mean(variant, "f1", perturb)

    def perturb_drop(self, variant: str) -> float:
        return self.mean_f1(variant, False) - self.mean_f1(variant, True)

    def bucket_f1(self, variant: str, perturb: bool = False) -> dict[str, float]:
        """Micro F1 per length bucket, pooled over seeds."""
        pooled: dict[str, list[int]] = {}
        for r in self.runs:
            if r.variant != variant or r.perturb != perturb:
                continue
            for key, b in r.buckets.items():
                acc = pooled.setdefault(key, [0, 0, 0])
                acc[0] += b["matched"]
                acc[1] += b["gold_total"]
                acc[2] += b["pred_total"]
        out = {}
        for key, (m, g, p) in pooled.items():
            out[key] = 2 * m / (g + p) if g + p else 0.0
        return out

    def length_decline(self, variant: str, perturb: bool = False) -> float:
        """F1 of the shortest populated bucket minus F1 of the longest."""
        b = self.bucket_f1(variant, perturb)
        keys = [lo_hi for lo_hi in _bucket_keys() if lo_hi in b]
        if len(keys) < 2:
            return 0.0
        return b[keys[0]] - b[keys[-1]]

    def rows(self):
        for r in self.runs:
            yield {"variant": r.variant, "seed": r.seed, "perturb": r.perturb,
                   "precision": r.precision, "recall": r.recall, "f1": r.f1,
                   "accuracy": r.accuracy}


def _bucket_keys():
    return [f"{lo}+" if hi is None else f"{lo}-{hi}" for lo, hi in LENGTH_BUCKETS]


def ablation_corpus(seed: int = 0, n_train: int = 2000, n_test: int = 500,
                    profile: str = "ablation"):
    """Seeded synthetic train/test rows with shared variables and negation."""
    rng = random.Random(seed)
    # oversample: duplicates are removed by the split
    items = synth_corpus(rng, int(1.5 * (n_train + n_test)), GeneratorProfile.named(profile))
    tr, te = split_corpus(items, (n_train, n_test), random.Random(seed + 1))[:2]
    to_rows = lambda xs: [{"sentence": s, "fol": f} for s, f in xs]
    return to_rows(tr), to_rows(te)


def run_ablation(train_rows, test_rows, base: TrainConfig, variants, seeds,
                 perturb_modes=(False,), log_fn=None, skip=None) -> AblationTable:
    """Train every (perturb, variant, seed) combination and score it on the
    test rows.  ``skip(variant, seed, perturb)`` may return a previously
    finished AblationRun to reuse instead of retraining."""
    table = AblationTable()
    for perturb in perturb_modes:
        for variant in variants:
            for seed in seeds:
                run = skip(variant, seed, perturb) if skip is not None else None
                if run is None:
                    run = _one_run(train_rows, test_rows, base, variant, seed, perturb)
                table.runs.append(run)
                if log_fn is not None:
                    log_fn(run)
    return table


def _one_run(train_rows, test_rows, base, variant, seed, perturb) -> AblationRun:
    cfg = base.replace(variant=variant, seed=seed, perturb=perturb)
    train_ex, vocabs = prepare_corpus(train_rows, cfg)
    test_ex, _ = prepare_corpus(test_rows, cfg, vocabs)
    model, _, _ = train(train_ex, vocabs, cfg)
    preds = decode_sentences(model, [e.sentence for e in test_ex])
    texts = [p.text() if not p.unclosed else "" for p in preds]
    rep = score_corpus([(e.target.text(), t or None) for e, t in zip(test_ex, texts)],
                       lengths=[len(e.sentence) for e in test_ex])
    return AblationRun(variant, seed, perturb, rep.precision, rep.recall, rep.f1,
                       rep.accuracy, rep.buckets, texts)
