"""End-to-end command-line tests driven through main()'s exit codes."""

import subprocess
import sys

import numpy as np
import pytest

from pineq import tensorio
from pineq.audio import preprocess_audio
from pineq.cli import main, read_config
from pineq.corpus import load_corpus, stratified_split


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "corpus"
    rc = main(["synth", "--records", "8", "--seed", "9", "--out", str(d),
               "--audio-seconds", "0.25", "--image-width", "32",
               "--image-height", "24"])
    assert rc == 0
    return d


@pytest.fixture(scope="module")
def trained_dir(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    rc = main(["train", "--corpus", str(corpus_dir), "--model", "cnn",
               "--strategy", "random", "--samples-per-record", "2",
               "--epochs", "1", "--batch", "4", "--seed", "0",
               "--out", str(out)])
    assert rc == 0
    return out


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "synth" in capsys.readouterr().out
    assert main(["train", "--help"]) == 0
    assert "--samples-per-record" in capsys.readouterr().out


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert capsys.readouterr().err
    assert main([]) == 1
    assert "subcommand" in capsys.readouterr().err


def test_synth_materializes_loadable_corpus(corpus_dir):
    corpus = load_corpus(corpus_dir / "manifest.txt")
    assert len(corpus.records) == 8
    assert (corpus_dir / "audio").is_dir() and (corpus_dir / "photos").is_dir()


def test_split_stdout_matches_library(corpus_dir, capsys):
    assert main(["split", "--corpus", str(corpus_dir), "--seed", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    corpus = load_corpus(corpus_dir / "manifest.txt")
    train_recs, test_recs = stratified_split(list(corpus.records), seed=3)
    want = [f"train {r.record_id}" for r in train_recs] + \
           [f"test {r.record_id}" for r in test_recs]
    assert lines == want


def test_sample_is_deterministic(corpus_dir, tmp_path, capsys):
    args = ["sample", "--corpus", str(corpus_dir), "--strategy", "audio-major",
            "--samples-per-record", "3", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    capsys.readouterr()
    a = (tmp_path / "a" / "pairs.csv").read_bytes()
    b = (tmp_path / "b" / "pairs.csv").read_bytes()
    assert a == b
    lines = a.decode().strip().splitlines()
    assert lines[0] == "record,soundtrack,photo"
    assert len(lines) == 1 + 8 * 3


def test_preprocess_saves_feature_tensors(corpus_dir, tmp_path):
    out = tmp_path / "features"
    assert main(["preprocess", "--corpus", str(corpus_dir),
                 "--out", str(out)]) == 0
    corpus = load_corpus(corpus_dir / "manifest.txt")
    rec = corpus.records[0]
    n_media = len(corpus.records) * (len(rec.audio) + len(rec.photos))
    assert len(list(out.glob("*.pqct"))) == n_media
    meta = rec.audio[0]
    stored = tensorio.load_tensor(out / "p0000_a00.pqct")
    want = preprocess_audio(corpus.media_path(meta).read_bytes())
    np.testing.assert_array_equal(stored, want)


def test_train_writes_artifacts(trained_dir):
    for name in ("model.ckpt", "model.ckpt.idx", "model.json",
                 "report.txt", "loss.csv"):
        assert (trained_dir / name).exists(), name
    report = (trained_dir / "report.txt").read_text()
    assert "cnn" in report and "# model: cnn" in report
    assert (trained_dir / "loss.csv").read_text().startswith("epoch,loss\n")
    state = tensorio.load_checkpoint(trained_dir / "model.ckpt")
    assert any(k.startswith("backbone.") for k in state)


def test_eval_reproduces_train_accuracy(corpus_dir, trained_dir, capsys):
    assert main(["eval", "--model", str(trained_dir / "model.ckpt"),
                 "--corpus", str(corpus_dir), "--seed", "0"]) == 0
    eval_line = capsys.readouterr().out.strip().splitlines()[-1]
    report = (trained_dir / "report.txt").read_text()
    acc = [l for l in report.splitlines() if l.startswith("cnn")][0].split()[-1]
    assert f"test accuracy {acc}" in eval_line


def test_eval_missing_checkpoint_is_data_error(capsys):
    assert main(["eval", "--model", "missing.ckpt"]) == 2
    assert capsys.readouterr().err


def test_eval_without_corpus_is_usage_error(trained_dir, capsys):
    assert main(["eval", "--model", str(trained_dir / "model.ckpt")]) == 1
    assert "--corpus" in capsys.readouterr().err


def test_usage_errors(corpus_dir, tmp_path, capsys):
    cases = [
        ["train", "--corpus", str(corpus_dir)],                      # no --out
        ["train", "--corpus", str(corpus_dir), "--synthetic",
         "--out", str(tmp_path / "x")],                              # exclusive
        ["train", "--corpus", str(corpus_dir), "--model", "resnext",
         "--out", str(tmp_path / "x")],
        ["sample", "--corpus", str(corpus_dir), "--strategy", "greedy"],
        ["train", "--corpus", str(corpus_dir), "--smoothing", "1.5",
         "--out", str(tmp_path / "x")],
        ["experiment", "--corpus", str(corpus_dir), "--epochs", "abc",
         "--out", str(tmp_path / "x")],
    ]
    for argv in cases:
        assert main(argv) == 1, argv
        assert capsys.readouterr().err


def test_malformed_manifest_is_data_error(tmp_path, capsys):
    bad = tmp_path / "manifest.txt"
    bad.write_text("counts 2 2\nrecord a Ripe\n")
    assert main(["split", "--corpus", str(bad)]) == 2
    assert capsys.readouterr().err


def test_config_file_precedence_and_echo(corpus_dir, tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(
        "# tiny grid\n"
        "model = cnn\n"
        "strategy = random\n"
        "samples-per-record = 2\n"
        "seed = 0,1\n"
        "epochs = 3\n"
        "batch = 4\n")
    assert read_config(str(cfg))["epochs"] == "3"
    out = tmp_path / "exp"
    rc = main(["experiment", "--corpus", str(corpus_dir),
               "--config", str(cfg), "--epochs", "1", "--out", str(out)])
    capsys.readouterr()
    assert rc == 0
    report = (out / "report.txt").read_text()
    assert "# epochs: 1" in report          # flag beats config file
    assert "# model: cnn" in report
    assert "# seed: 0,1" in report
    csv_lines = (out / "results.csv").read_text().strip().splitlines()
    assert len(csv_lines) == 1 + 2 + 1       # header, two seeds, one aggregate
    assert (out / "loss_cnn_random_s2_seed1.csv").exists()

    bad = tmp_path / "bad.cfg"
    bad.write_text("epochs\n")
    assert main(["experiment", "--corpus", str(corpus_dir),
                 "--config", str(bad), "--out", str(out)]) == 1
    capsys.readouterr()


def test_experiment_rerun_is_byte_identical(corpus_dir, tmp_path, capsys):
    argv = ["experiment", "--corpus", str(corpus_dir), "--model", "cnn",
            "--strategy", "random", "--samples-per-record", "2",
            "--seed", "0", "--epochs", "1", "--batch", "4"]
    assert main(argv + ["--out", str(tmp_path / "r1")]) == 0
    assert main(argv + ["--out", str(tmp_path / "r2")]) == 0
    capsys.readouterr()
    for name in ("report.txt", "results.csv", "loss_cnn_random_s2_seed0.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == \
               (tmp_path / "r2" / name).read_bytes(), name


def test_module_invocation():
    proc = subprocess.run([sys.executable, "-m", "pineq", "--help"],
                          capture_output=True, text=True, cwd="/tmp")
    assert proc.returncode == 0
    assert "usage: pineq" in proc.stdout
