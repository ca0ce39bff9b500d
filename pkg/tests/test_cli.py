import json
import random

import pytest

from folparse.cli import EXIT_CHECK, EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from folparse.corpus import synth_corpus, write_jsonl

from conftest import WORKED_FOL, WORKED_MAPPING, WORKED_SENTENCE

SMALL = ["--hidden", "8", "--input-dim", "8", "--min-freq", "1", "--batch-size", "4"]


def read_jsonl(p):
    return [json.loads(ln) for ln in p.read_text().splitlines() if ln.strip()]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    items = synth_corpus(random.Random(2), 10)
    path = d / "train.jsonl"
    write_jsonl(path, [{"sentence": s, "fol": f} for s, f in items])
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", str(corpus), "--out", str(out), "--epochs", "2", "--quiet", *SMALL]) == EXIT_OK
    return out


def test_convert_boxer_with_one_bad_line(tmp_path):
    items = synth_corpus(random.Random(0), 99)
    lines = ["% header comment"] + [f"{s}\t{f}" for s, f in items]
    lines.insert(40, "broken\tfol(1,and(n1man(A)")
    src = tmp_path / "in.boxer"
    src.write_text("\n".join(lines) + "\n")
    out = tmp_path / "out.jsonl"
    assert main(["convert", str(src), str(out)]) == EXIT_OK
    rows = read_jsonl(out)
    errs = read_jsonl(tmp_path / "out.jsonl.errors.jsonl")
    assert len(rows) == 99 and len(errs) == 1
    assert errs[0]["error"] == "FOLSyntaxError" and errs[0]["input"]["sentence"] == "broken"
    manifest = json.loads((tmp_path / "out.jsonl.manifest.json").read_text())
    assert manifest["command"] == "convert" and str(src) in manifest["inputs"]


def test_convert_worked_example_exactly(tmp_path):
    src = tmp_path / "in.jsonl"
    write_jsonl(src, [{"sentence": WORKED_SENTENCE, "fol": WORKED_FOL}])
    out = tmp_path / "out.jsonl"
    assert main(["convert", str(src), str(out)]) == EXIT_OK
    assert read_jsonl(out)[0]["mapping"] == WORKED_MAPPING


def test_convert_empty_and_missing(tmp_path):
    src = tmp_path / "empty.txt"
    src.write_text("")
    assert main(["convert", str(src), str(tmp_path / "o.jsonl")]) == EXIT_OK
    assert (tmp_path / "o.jsonl").read_text() == ""
    assert main(["convert", str(tmp_path / "nope"), str(tmp_path / "o.jsonl")]) == EXIT_DATA


def test_convert_max_len(tmp_path):
    src = tmp_path / "in.jsonl"
    write_jsonl(src, [{"sentence": WORKED_SENTENCE, "fol": WORKED_FOL}])
    assert main(["convert", str(src), str(tmp_path / "o.jsonl"), "--max-len", "5"]) == EXIT_OK
    assert read_jsonl(tmp_path / "o.jsonl.errors.jsonl")[0]["error"] == "CapacityExceeded"


def test_usage_errors(capsys):
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert main(["synth", "x.jsonl", "--profile", "nonsense"]) == EXIT_USAGE


def test_data_root_env(tmp_path, monkeypatch, corpus):
    monkeypatch.setenv("FOLPARSE_DATA", str(corpus.parent))
    monkeypatch.chdir(tmp_path)
    assert main(["convert", corpus.name, "o.jsonl"]) == EXIT_OK
    assert len(read_jsonl(tmp_path / "o.jsonl")) == 10


def test_synth_is_seeded(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["synth", str(a), "--count", "20", "--seed", "4"]) == EXIT_OK
    assert main(["synth", str(b), "--count", "20", "--seed", "4"]) == EXIT_OK
    assert a.read_text() == b.read_text() and len(read_jsonl(a)) == 20


def test_train_outputs(trained):
    for name in ("model.ckpt", "train.log", "manifest.json", "vocab"):
        assert (trained / name).exists()
    lines = (trained / "train.log").read_text().splitlines()
    assert len(lines) == 2
    keys = {kv.split("=")[0] for kv in lines[0].split()}
    assert keys == {"epoch", "L_CE", "L_aux", "L_dec", "L_pos", "total"}


def test_train_is_deterministic(tmp_path, corpus, trained):
    out = tmp_path / "again"
    assert main(["train", str(corpus), "--out", str(out), "--epochs", "2", "--quiet", *SMALL]) == EXIT_OK
    assert (out / "model.ckpt").read_bytes() == (trained / "model.ckpt").read_bytes()


def test_train_bad_config(tmp_path, corpus):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("learning_rate = 3\n")
    assert main(["train", str(corpus), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == EXIT_USAGE
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"sentence": "x"}\n')
    assert main(["train", str(bad), "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_decode(tmp_path, trained, corpus):
    sents = tmp_path / "s.txt"
    sents.write_text("a man sleeps\n" + " ".join(["word"] * 200) + "\n")
    out = tmp_path / "pred.tsv"
    assert main(["decode", str(trained / "model.ckpt"), str(sents), str(out),
                 "--vocab", str(trained / "vocab")]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0].split("\t")[1] in ("OK", "UNCLOSED") and lines[1] == "\tERROR"
    errs = read_jsonl(tmp_path / "pred.tsv.errors.jsonl")
    assert [e["line"] for e in errs] == [2] and errs[0]["error"] == "LengthExceeded"


def test_decode_empty_input(tmp_path, trained):
    sents = tmp_path / "s.txt"
    sents.write_text("")
    out = tmp_path / "pred.tsv"
    assert main(["decode", str(trained / "model.ckpt"), str(sents), str(out)]) == EXIT_OK
    assert out.read_text() == ""


def test_decode_vocab_mismatch(tmp_path, trained):
    other = tmp_path / "other"
    data = tmp_path / "d.jsonl"
    write_jsonl(data, [{"sentence": WORKED_SENTENCE, "fol": WORKED_FOL}])
    assert main(["train", str(data), "--out", str(other), "--epochs", "1", "--quiet", *SMALL]) == EXIT_OK
    sents = tmp_path / "s.txt"
    sents.write_text("a man sleeps\n")
    assert main(["decode", str(trained / "model.ckpt"), str(sents), str(tmp_path / "p.tsv"),
                 "--vocab", str(other / "vocab")]) == EXIT_DATA
    assert main(["decode", str(tmp_path / "missing.ckpt"), str(sents), str(tmp_path / "p.tsv")]) == EXIT_DATA


def test_score_identity_and_empty(tmp_path, corpus, capsys):
    conv = tmp_path / "gold.jsonl"
    assert main(["convert", str(corpus), str(conv)]) == EXIT_OK
    pred = tmp_path / "pred.txt"
    pred.write_text("".join(r["mapping"] + "\n" for r in read_jsonl(conv)))
    out = tmp_path / "rep"
    assert main(["score", str(conv), str(pred), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["f1"] == 1.0 and rep["accuracy"] == 1.0
    assert len((out / "per_example.tsv").read_text().splitlines()) == 11
    assert (out / "buckets.tsv").exists() and (out / "manifest.json").exists()

    pred.write_text("\n" * 10)
    assert main(["score", str(conv), str(pred), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["recall"] == 0.0 and rep["accuracy"] == 0.0


def test_score_exhaustive_not_below_greedy(tmp_path, corpus):
    conv = tmp_path / "gold.jsonl"
    main(["convert", str(corpus), str(conv)])
    rows = read_jsonl(conv)
    # pair every gold with its neighbour's mapping
    pred = tmp_path / "pred.txt"
    pred.write_text("".join(rows[(i + 1) % len(rows)]["mapping"] + "\n" for i in range(len(rows))))
    main(["score", str(conv), str(pred), "--out", str(tmp_path / "g")])
    main(["score", str(conv), str(pred), "--out", str(tmp_path / "e"), "--exhaustive"])
    g = json.loads((tmp_path / "g" / "report.json").read_text())
    e = json.loads((tmp_path / "e" / "report.json").read_text())
    assert e["f1"] >= g["f1"] - 1e-12


def test_score_line_mismatch(tmp_path, corpus):
    pred = tmp_path / "pred.txt"
    pred.write_text("fol( n1man A )\n")
    assert main(["score", str(corpus), str(pred)]) == EXIT_DATA


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--variant", "vanilla", "--max-entries", "5"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "variant=vanilla term=L_CE" in out and "status=PASS" in out


def test_gradcheck_failure_exit(monkeypatch):
    import folparse.checks as checks

    class Bad:
        passed = False

        def max_error(self):
            return 1.0

        def failures(self):
            return ["W"]
    monkeypatch.setattr(checks, "model_gradcheck", lambda *a, **k: {"L_CE": Bad()})
    assert main(["gradcheck", "--variant", "vanilla"]) == EXIT_CHECK


def test_ablate_tiny_and_resume(tmp_path, capsys):
    args = ["ablate", "--out", str(tmp_path), "--variants", "vanilla,sepheads", "--seeds", "0",
            "--train-size", "12", "--test-size", "4", "--epochs", "1", *SMALL]
    assert main(args) == EXIT_OK
    table = (tmp_path / "results.tsv").read_text().splitlines()
    assert table[0].split("\t") == ["model", "precision", "recall", "f1", "accuracy"]
    assert [r.split("\t")[0] for r in table[1:]] == ["Vanilla (Baseline)", "Separate Heads"]
    assert len(read_jsonl(tmp_path / "runs.jsonl")) == 2
    assert len((tmp_path / "predictions" / "vanilla-s0.txt").read_text().splitlines()) == 4
    before = (tmp_path / "results.tsv").read_text()
    capsys.readouterr()
    assert main(args) == EXIT_OK
    # resumed: nothing retrained, nothing appended
    assert "variant=" not in capsys.readouterr().out
    assert len(read_jsonl(tmp_path / "runs.jsonl")) == 2
    assert (tmp_path / "results.tsv").read_text() == before


def test_ablate_refuses_mixed_config(tmp_path):
    base = ["ablate", "--out", str(tmp_path), "--variants", "vanilla", "--seeds", "0",
            "--train-size", "12", "--test-size", "4", *SMALL]
    assert main(base + ["--epochs", "1"]) == EXIT_OK
    assert main(base + ["--epochs", "2"]) == EXIT_USAGE


def test_ablate_perturb_extends_plain_sweep(tmp_path, capsys):
    base = ["ablate", "--out", str(tmp_path), "--variants", "vanilla", "--seeds", "0",
            "--train-size", "12", "--test-size", "4", "--epochs", "1", *SMALL]
    assert main(base) == EXIT_OK
    capsys.readouterr()
    assert main(base + ["--perturb"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("variant=vanilla") == 1 and "perturb=1" in out
    rows = read_jsonl(tmp_path / "runs.jsonl")
    assert [r["perturb"] for r in rows] == [False, True]
    header = (tmp_path / "results.tsv").read_text().splitlines()[0].split("\t")
    assert header[-2:] == ["f1_perturb", "f1_drop"]
