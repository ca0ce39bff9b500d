"""``folparse`` command line: convert, synth, train, decode, score, gradcheck, ablate."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import random
import sys
from pathlib import Path

from . import __version__
from .corpus import (GeneratorProfile, LengthExceeded, Vocabs, read_boxer_lines, read_jsonl,
                     synth_corpus, tokenize_sentence, write_jsonl)
from .fol_core import FOLSyntaxError, UnboundVariable, normalize_universal, parse_fol
from .linearizer import CapacityExceeded, linearize
from .metric import LENGTH_BUCKETS, InstanceTooLarge, score_corpus
from .model import VARIANTS
from .training import (ConfigError, decode_sentences, load_checkpoint,
                       load_config_file, prepare_corpus, save_checkpoint, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
DATA_ROOT_ENV = "FOLPARSE_DATA"


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers

def resolve(path) -> Path:
    """Relative paths that do not exist here are looked up under $FOLPARSE_DATA."""
    p = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if not p.is_absolute() and not p.exists() and root:
        alt = Path(root) / p
        if alt.exists():
            return alt
    return p


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, config: dict, inputs=(), outputs=()) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def kv(**fields) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6f}"
        return str(v)
    return " ".join(f"{k}={fmt(v)}" for k, v in fields.items())


def read_corpus(path) -> list[dict]:
    path = resolve(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    try:
        rows = read_jsonl(path)
    except (json.JSONDecodeError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None
    for i, r in enumerate(rows, 1):
        if "sentence" not in r or "fol" not in r:
            raise DataError(f"{path}:{i}: expected fields 'sentence' and 'fol'")
    return rows


def _train_overrides(args) -> dict:
    return {"variant": args.variant, "seed": args.seed, "epochs": args.epochs,
            "batch_size": args.batch_size, "perturb": True if args.perturb else None,
            "hidden": getattr(args, "hidden", None), "input_dim": getattr(args, "input_dim", None),
            "min_freq": getattr(args, "min_freq", None)}


# ---------------------------------------------------------------------------
# commands

def cmd_convert(args) -> int:
    src = resolve(args.input)
    if not src.exists():
        raise DataError(f"{src}: no such file")
    text = src.read_text(encoding="utf-8")
    first = next((ln.strip() for ln in text.splitlines() if ln.strip()), "")
    rows = read_jsonl(src) if first.startswith("{") else read_boxer_lines(src)
    out_rows, errors = [], []
    for i, row in enumerate(rows, 1):
        try:
            f = normalize_universal(parse_fol(row["fol"]))
            ts = linearize(f, args.max_len)
        except (FOLSyntaxError, UnboundVariable, CapacityExceeded, KeyError) as exc:
            errors.append({"line": i, "input": row, "error": type(exc).__name__, "reason": str(exc)})
            continue
        out = dict(row)
        out["mapping"] = ts.text()
        out["categories"] = " ".join(c.value for c in ts.categories)
        out_rows.append(out)
    out = Path(args.output)
    write_jsonl(out, out_rows)
    sidecar = Path(args.errors or f"{out}.errors.jsonl")
    write_jsonl(sidecar, errors)
    write_manifest(f"{out}.manifest.json", "convert", {"max_len": args.max_len}, [src], [out, sidecar])
    print(kv(converted=len(out_rows), errors=len(errors)))
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        profile = GeneratorProfile.named(args.profile)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    items = synth_corpus(random.Random(args.seed), args.count, profile)
    out = Path(args.output)
    write_jsonl(out, [{"sentence": s, "fol": f} for s, f in items])
    write_manifest(f"{out}.manifest.json", "synth",
                   {"seed": args.seed, "count": args.count, "profile": args.profile}, [], [out])
    print(kv(written=len(items)))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config_file(resolve(args.config) if args.config else None, _train_overrides(args))
    rows = read_corpus(args.corpus)
    dev_rows = read_corpus(args.dev) if args.dev else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        train_ex, vocabs = prepare_corpus(rows, cfg)
        dev_ex = prepare_corpus(dev_rows, cfg, vocabs)[0] if dev_rows else None
    except (FOLSyntaxError, UnboundVariable, CapacityExceeded, LengthExceeded, ValueError) as exc:
        raise DataError(f"corpus: {exc}") from None
    vocabs.save(out / "vocab")
    log_path = out / "train.log"
    with open(log_path, "w", encoding="utf-8") as log:
        def log_fn(rec):
            fields = {"epoch": rec.epoch, **rec.losses}
            if rec.dev_f1 is not None:
                fields.update(dev_f1=rec.dev_f1, dev_accuracy=rec.dev_accuracy)
            if rec.train_exact is not None:
                fields["train_exact"] = rec.train_exact
            line = kv(**fields)
            log.write(line + "\n")
            log.flush()
            if not args.quiet:
                print(line, flush=True)
        model, history, best = train(train_ex, vocabs, cfg, dev_ex, log_fn)
    model.load_arrays(best)
    ckpt = out / "model.ckpt"
    save_checkpoint(ckpt, model, {"train_config": cfg.to_dict()})
    inputs = [resolve(args.corpus)] + ([resolve(args.dev)] if args.dev else [])
    write_manifest(out / "manifest.json", "train", cfg.to_dict(), inputs, [ckpt, log_path])
    return EXIT_OK


def _read_sentences(path) -> list[str]:
    path = resolve(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    lines = path.read_text(encoding="utf-8").splitlines()
    if path.suffix == ".jsonl":
        return [json.loads(ln)["sentence"] for ln in lines if ln.strip()]
    return lines


def cmd_decode(args) -> int:
    ckpt = resolve(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"{ckpt}: no such file")
    try:
        model, meta = load_checkpoint(ckpt)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if args.vocab:
        if Vocabs.load(resolve(args.vocab)).digest() != meta["vocab_digest"]:
            raise DataError("vocabulary digest does not match the checkpoint")
    sentences = _read_sentences(args.sentences)
    limit = model.config.max_input_len
    out = Path(args.output)
    errors = []
    with open(out, "w", encoding="utf-8") as fh:
        for i, sent in enumerate(sentences, 1):
            toks = tokenize_sentence(sent)
            if len(toks) > limit:
                errors.append({"line": i, "error": "LengthExceeded",
                               "reason": f"{len(toks)} tokens (limit {limit})"})
                fh.write("\tERROR\n")
                continue
            ts = decode_sentences(model, [toks])[0]
            fh.write(f"{ts.text()}\t{'UNCLOSED' if ts.unclosed else 'OK'}\n")
    sidecar = Path(f"{out}.errors.jsonl")
    write_jsonl(sidecar, errors)
    write_manifest(f"{out}.manifest.json", "decode", {"checkpoint": str(ckpt)},
                   [ckpt, resolve(args.sentences)], [out, sidecar])
    print(kv(decoded=len(sentences) - len(errors), errors=len(errors)))
    return EXIT_OK


def _read_mappings(path) -> tuple[list[str | None], list[int] | None]:
    """Gold/pred lines: JSONL rows (mapping or fol, plus sentence), decode
    output (mapping TAB status) or bare mapping lines."""
    path = resolve(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    if path.suffix == ".jsonl":
        rows = read_jsonl(path)
        texts = [r.get("mapping") or r.get("fol") for r in rows]
        lengths = [len(tokenize_sentence(r["sentence"])) for r in rows] if all(
            "sentence" in r for r in rows) else None
        return texts, lengths
    texts = []
    for ln in path.read_text(encoding="utf-8").splitlines():
        mapping, _, status = ln.partition("\t")
        ok = mapping.strip() and status.strip() not in ("UNCLOSED", "ERROR")
        texts.append(mapping if ok else None)
    return texts, None


def cmd_score(args) -> int:
    gold, lengths = _read_mappings(args.gold)
    pred, _ = _read_mappings(args.pred)
    if len(gold) != len(pred):
        raise DataError(f"line count mismatch: gold {len(gold)}, pred {len(pred)}")
    if any(g is None for g in gold):
        raise DataError("gold file has empty lines")
    if args.lengths:
        lengths = [len(tokenize_sentence(s)) for s in _read_sentences(args.lengths)]
    try:
        rep = score_corpus(list(zip(gold, pred)), lengths=lengths, exhaustive=args.exhaustive,
                           seed=args.seed)
    except InstanceTooLarge as exc:
        raise DataError(str(exc)) from None
    except (FOLSyntaxError, UnboundVariable, ValueError) as exc:
        raise DataError(f"gold: {exc}") from None
    print(kv(precision=rep.precision, recall=rep.recall, f1=rep.f1, accuracy=rep.accuracy,
             string_accuracy=rep.string_accuracy, n=rep.n))
    for key, b in rep.buckets.items():
        print(kv(bucket=key, n=b["n"], f1=b["f1"], accuracy=b["accuracy"]))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(rep.as_dict(), indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
        with open(out / "per_example.tsv", "w", encoding="utf-8") as fh:
            fh.write("line\tprecision\trecall\tf1\texact\tmalformed\n")
            for i, r in enumerate(rep.per_example, 1):
                fh.write(f"{i}\t{r.precision:.6f}\t{r.recall:.6f}\t{r.f1:.6f}\t{int(r.exact_match)}"
                         f"\t{int(r.malformed)}\n")
        with open(out / "buckets.tsv", "w", encoding="utf-8") as fh:
            fh.write("bucket\tn\tprecision\trecall\tf1\taccuracy\n")
            for lo, hi in LENGTH_BUCKETS:
                key = f"{lo}+" if hi is None else f"{lo}-{hi}"
                if key in rep.buckets:
                    b = rep.buckets[key]
                    fh.write(f"{key}\t{b['n']}\t{b['precision']:.6f}\t{b['recall']:.6f}"
                             f"\t{b['f1']:.6f}\t{b['accuracy']:.6f}\n")
        write_manifest(out / "manifest.json", "score", {"exhaustive": args.exhaustive, "seed": args.seed},
                       [resolve(args.gold), resolve(args.pred)], [out / "report.json"])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import model_gradcheck
    variants = VARIANTS if args.variant in (None, "all") else (args.variant,)
    ok = True
    for v in variants:
        for term, rep in model_gradcheck(v, seed=args.seed, max_entries=args.max_entries,
                                                 floor=args.floor).items():
            ok &= rep.passed
            print(kv(variant=v, term=term, max_error=f"{rep.max_error():.3e}",
                     status="PASS" if rep.passed else "FAIL",
                     failing=",".join(sorted(rep.failures())) or "-"))
    return EXIT_OK if ok else EXIT_CHECK


ROW_NAMES = {
    "vanilla": "Vanilla (Baseline)", "vanilla-selfattn": "+ Self Attention",
    "vanilla-align": "+ Align Mechanism", "sepheads": "Separate Heads",
    "sepheads-selfattn": "Separate Heads + Self Attention", "sepheads-align": "Separate Heads + Align",
}


def cmd_ablate(args) -> int:
    from .experiments import AblationRun, ablation_corpus, run_ablation
    cfg = load_config_file(resolve(args.config) if args.config else None, _train_overrides(args))
    # each run sets its own perturb mode
    cfg = cfg.replace(perturb=False)
    if args.train:
        train_rows, test_rows = read_corpus(args.train), read_corpus(args.test)
    else:
        train_rows, test_rows = ablation_corpus(args.corpus_seed, args.train_size, args.test_size,
                                                args.profile)
    variants = list(VARIANTS) if args.variants == "all" else args.variants.split(",")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    seeds = [int(s) for s in args.seeds.split(",")]
    modes = (False, True) if args.perturb else (False,)
    out = Path(args.out)
    (out / "predictions").mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "test.jsonl", test_rows)
    runs_path = out / "runs.jsonl"
    sweep = {"config": cfg.to_dict(), "corpus": [len(train_rows), len(test_rows)],
             "test_digest": file_digest(out / "test.jsonl")}
    sweep_path = out / "sweep.json"
    if runs_path.exists():
        prior = json.loads(sweep_path.read_text(encoding="utf-8")) if sweep_path.exists() else None
        if prior != sweep:
            raise ConfigError(f"{out} holds runs from a different configuration")
    sweep_path.write_text(json.dumps(sweep, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    done = {}
    if runs_path.exists():
        for r in read_jsonl(runs_path):
            preds = (out / "predictions" / f"{r['tag']}.txt").read_text(encoding="utf-8").splitlines()
            r.pop("tag")
            run = AblationRun(**r, predictions=preds)
            done[(run.variant, run.seed, run.perturb)] = run

    def skip(variant, seed, perturb):
        return done.get((variant, seed, perturb))

    def log_fn(run):
        if (run.variant, run.seed, run.perturb) in done:
            return
        # each finished run is saved at once, so interrupted sweeps resume
        (out / "predictions" / f"{run.tag}.txt").write_text(
            "".join(p + "\n" for p in run.predictions), encoding="utf-8")
        with open(runs_path, "a", encoding="utf-8") as fh:
            row = {k: getattr(run, k) for k in ("variant", "seed", "perturb", "precision", "recall",
                                                "f1", "accuracy", "buckets")}
            fh.write(json.dumps({**row, "tag": run.tag}, sort_keys=True) + "\n")
        print(kv(variant=run.variant, seed=run.seed, perturb=int(run.perturb), f1=run.f1,
                 accuracy=run.accuracy), flush=True)

    table = run_ablation(train_rows, test_rows, cfg, variants, seeds, modes, log_fn, skip)
    with open(out / "results.tsv", "w", encoding="utf-8") as fh:
        fh.write("model\tprecision\trecall\tf1\taccuracy" + ("\tf1_perturb\tf1_drop" if args.perturb else "")
                 + "\n")
        for v in variants:
            cells = [table.mean(v, m) * 100 for m in ("precision", "recall", "f1", "accuracy")]
            if args.perturb:
                cells += [table.mean_f1(v, True) * 100, table.perturb_drop(v) * 100]
            fh.write(ROW_NAMES[v] + "".join(f"\t{c:.2f}" for c in cells) + "\n")
    with open(out / "buckets.tsv", "w", encoding="utf-8") as fh:
        keys = [f"{lo}+" if hi is None else f"{lo}-{hi}" for lo, hi in LENGTH_BUCKETS]
        fh.write("model\t" + "\t".join(keys) + "\n")
        for v in variants:
            b = table.bucket_f1(v)
            fh.write(ROW_NAMES[v] + "".join(f"\t{b[k] * 100:.2f}" if k in b else "\t-" for k in keys)
                     + "\n")
    write_manifest(out / "manifest.json", "ablate",
                   {**cfg.to_dict(), "variants": variants, "seeds": seeds, "perturb": bool(args.perturb),
                    "corpus_seed": args.corpus_seed, "profile": args.profile},
                   [resolve(p) for p in (args.train, args.test) if p], [out / "results.tsv"])
    print((out / "results.tsv").read_text(encoding="utf-8"), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------

def _add_train_flags(p, epochs_default=None):
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, default=epochs_default)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--perturb", action="store_true", help="permute variable letters during training")
    p.add_argument("--hidden", type=int)
    p.add_argument("--input-dim", type=int)
    p.add_argument("--min-freq", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="folparse", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="Boxer FOL or JSONL -> JSONL with mapping lines")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--errors", help="sidecar for rejected lines (default OUTPUT.errors.jsonl)")
    p.add_argument("--max-len", type=int, default=None, help="reject mappings longer than this")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("output")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", default="default")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a parser")
    p.add_argument("corpus")
    p.add_argument("--dev")
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="greedy-decode sentences with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("sentences", help="plain text (one per line) or JSONL with 'sentence'")
    p.add_argument("output")
    p.add_argument("--vocab", help="vocabulary directory to verify against the checkpoint")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("score", help="score predictions against gold")
    p.add_argument("gold")
    p.add_argument("pred")
    p.add_argument("--out")
    p.add_argument("--lengths", help="sentence file giving input lengths for buckets")
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss term")
    p.add_argument("--variant", choices=VARIANTS + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-entries", type=int)
    p.add_argument("--floor", type=float, default=1e-8,
                   help="denominator floor of the relative error (1e-6 absorbs round-off)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train variants over seeds and tabulate test scores")
    p.add_argument("--out", required=True)
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--variants", default="all")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--profile", default="ablation")
    p.add_argument("--corpus-seed", type=int, default=0)
    p.add_argument("--train-size", type=int, default=2000)
    p.add_argument("--test-size", type=int, default=500)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command == "ablate" and bool(args.train) != bool(args.test):
        print("error: --train and --test go together", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
