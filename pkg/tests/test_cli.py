import csv
import json
import os

import pytest

from peekpop.cli import main

SYNTH_SET = ["--set", "n_users=500", "--set", "attach_m=4", "--set", "n_items=300",
             "--set", "p0=0.02", "--set", "epsilon=0.002"]

FAST = ["--max-epochs", "300"]

CONFIG = """
k = 5
T = 28
folds = 5
seed = 3
learner = { max_epochs = 300 }

[data]
name = "tiny"
profile = "default"

[data.synth]
n_users = 500
attach_m = 4
n_items = 300
p0 = 0.02
epsilon = 0.002
seed = 1
"""


def read_all(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d))}


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--seed", "1", "--out", str(out), "--cache", *SYNTH_SET]) == 0
    return out


def data_args(d):
    return ["--graph", str(d / "graph.tsv"), "--adoptions", str(d / "adoptions.tsv")]


def test_synth_outputs(corpus_dir, tmp_path):
    files = read_all(corpus_dir)
    assert {"graph.tsv", "adoptions.tsv", "synth.json", "corpus.clb"} <= set(files)
    info = json.loads(files["synth.json"])
    assert info["config"]["n_items"] == 300 and info["edges"] == 4 * (500 - 4)
    assert main(["synth", "--seed", "1", "--out", str(tmp_path), "--cache", *SYNTH_SET]) == 0
    assert read_all(tmp_path) == files


def test_stage_pipeline(corpus_dir, tmp_path):
    before = read_all(corpus_dir)
    out = str(tmp_path)
    assert main(["cohort", *data_args(corpus_dir), "--out", out]) == 0
    assert json.load(open(tmp_path / "cohort.json"))["size"] > 100
    assert main(["featurize", *data_args(corpus_dir), "--cohort", str(tmp_path / "cohort.jsonl"),
                 "--out", out]) == 0
    feats = str(tmp_path / "features.csv")
    header = next(csv.reader(open(feats)))
    assert len(header) == 31 + 2
    assert main(["train", "--features", feats, "--out", out]) == 0
    assert main(["eval", "--features", feats, "--model", str(tmp_path / "model.json"),
                 "--out", out]) == 0
    fitted = json.load(open(tmp_path / "eval.json"))["accuracy"]
    assert main(["eval", "--features", feats, "--out", out, "--categories", "temporal"]) == 0
    cv = json.load(open(tmp_path / "eval.json"))
    assert len(cv["features"]) == 6 and 0.5 < cv["accuracy"] <= fitted
    assert main(["ablate", "--features", feats, "--out", out, *FAST]) == 0
    rows = list(csv.reader(open(tmp_path / "ablation.csv")))
    assert [r[0] for r in rows[1:]] == ["temporal", "ego", "subgraph", "root", "resharer",
                                        "similarity", "all", "all-temporal"]
    assert main(["scan", "--features", feats, "--out", out, *FAST]) == 0
    assert len(list(csv.reader(open(tmp_path / "scan.csv")))) == 32
    # inputs untouched
    assert read_all(corpus_dir) == before


def test_report_reproducible(tmp_path):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(CONFIG)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["report", "--config", str(cfg), "--out", str(a)]) == 0
    summary = json.load(open(a / "summary.json"))
    assert len(summary["accuracy"]) == 8
    assert summary["cohort"]["formulation"] == "fixed_k"
    assert main(["report", "--config", str(cfg), "--out", str(b)]) == 0
    fa, fb = read_all(a), read_all(b)
    fa.pop("config.json"), fb.pop("config.json")  # records its own output path
    fa["summary.json"] = fa["summary.json"].replace(str(a).encode(), b"")
    fb["summary.json"] = fb["summary.json"].replace(str(b).encode(), b"")
    assert fa == fb


def test_report_kt(tmp_path):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(CONFIG.replace("seed = 3\n", "seed = 3\nt = 3\n"))
    assert main(["report", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    header = next(csv.reader(open(tmp_path / "features.csv")))
    assert len(header) - 2 == 31 + 3
    summary = json.load(open(tmp_path / "summary.json"))
    assert "temporal+daily" in summary["accuracy"] and summary["cohort"]["t"] == 3


def test_transfer_needs_two(tmp_path, capsys):
    assert main(["transfer", "--profile", "fast", "--out", str(tmp_path)]) == 1
    assert "need >= 2 datasets" in capsys.readouterr().err


def test_transfer_from_features(corpus_dir, tmp_path):
    out = str(tmp_path)
    assert main(["cohort", *data_args(corpus_dir), "--out", out]) == 0
    assert main(["featurize", *data_args(corpus_dir), "--cohort", str(tmp_path / "cohort.jsonl"),
                 "--out", out]) == 0
    feats = str(tmp_path / "features.csv")
    assert main(["transfer", "--features", feats, "--features", feats, "--name", "a",
                 "--name", "b", "--out", out, *FAST]) == 0
    report = json.load(open(tmp_path / "transfer.json"))
    assert len(report["temporal"]["accuracy"]) == 2
    assert report["n_sign_features"] == 25 and report["n_sign_flips"] == 0
    rows = list(csv.reader(open(tmp_path / "signs.csv")))
    assert rows[0] == ["feature", "category", "a", "b", "flips"] and len(rows) == 26


def test_stage_error_named(tmp_path, capsys):
    missing = str(tmp_path / "nope.tsv")
    assert main(["cohort", "--graph", missing, "--adoptions", missing, "--out", str(tmp_path)]) == 1
    assert "[cohort]" in capsys.readouterr().err
    cfg = tmp_path / "bad.toml"
    cfg.write_text('[data]\nprofile = "default"\n[data.synth]\nbogus = 1\n')
    assert main(["report", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "[ingest]" in capsys.readouterr().err


def test_bad_synth_key(tmp_path, capsys):
    assert main(["synth", "--set", "bogus=1", "--out", str(tmp_path)]) == 1
    assert "bogus" in capsys.readouterr().err
