import json
import subprocess
import sys

import numpy as np
import pytest

from parslda import cli, core
from parslda import corpus as C
from parslda.predictor import read_predictions

TRAIN_FAST = ["--topics", "3", "--alpha", "0.5", "--beta", "0.1", "--rho", "0.25", "--sweeps", "20", "--burn-in", "10"]
FAST = [*TRAIN_FAST, "--predict-sweeps", "10", "--predict-burn-in", "5"]


@pytest.fixture
def synth_files(tmp_path):
    corpus, truth = tmp_path / "c.tsv", tmp_path / "t.json"
    assert cli.main(["synth", "--docs", "120", "--seed", "7",
                     "--out-corpus", str(corpus), "--out-truth", str(truth)]) == 0
    return corpus, truth


def test_synth_reproducible(tmp_path, synth_files):
    corpus, truth = synth_files
    again_c, again_t = tmp_path / "c2.tsv", tmp_path / "t2.json"
    assert cli.main(["synth", "--docs", "120", "--seed", "7",
                     "--out-corpus", str(again_c), "--out-truth", str(again_t)]) == 0
    assert corpus.read_bytes() == again_c.read_bytes()
    assert truth.read_bytes() == again_t.read_bytes()
    assert C.load_corpus(corpus).D == 120


def test_train_then_predict(tmp_path, synth_files):
    corpus, _ = synth_files
    model, preds = tmp_path / "m.json", tmp_path / "p.tsv"
    assert cli.main(["train", "--corpus", str(corpus), "--out-model", str(model), *TRAIN_FAST]) == 0
    loaded = core.load_model(model)
    assert loaded.hyper.n_topics == 3
    assert cli.main(["predict", "--model", str(model), "--corpus", str(corpus),
                     "--out-preds", str(preds), "--predict-sweeps", "10", "--predict-burn-in", "5"]) == 0
    assert len(read_predictions(preds)) == 120


@pytest.mark.parametrize("combiner", ["naive", "simple", "weighted"])
def test_ptrain_and_ensemble_predict(tmp_path, synth_files, capsys, combiner):
    corpus, _ = synth_files
    out_model, preds, again = tmp_path / "m.json", tmp_path / "p.tsv", tmp_path / "p2.tsv"
    rc = cli.main(["ptrain", "--corpus", str(corpus), "--shards", "2", "--combiner", combiner,
                   "--out-model", str(out_model), "--out-preds", str(preds), *FAST])
    assert rc == 0
    timing = json.loads(capsys.readouterr().out)
    assert len(timing["fit_ms"]) == 2 and "test_mse" in timing
    written = read_predictions(preds)
    assert len(written) == 24
    # replaying the saved model on the held-out split reproduces the predictions
    train, test = C.train_test_split(C.prune_vocabulary(C.load_corpus(corpus), 0.02), 96, seed=0)
    held = tmp_path / "held.tsv"
    C.write_corpus(test, held)
    assert cli.main(["predict", "--model", str(out_model), "--corpus", str(held), "--out-preds", str(again),
                     "--predict-sweeps", "10", "--predict-burn-in", "5"]) == 0
    np.testing.assert_array_equal(read_predictions(again).y_hat, written.y_hat)


def test_missing_required_option(capsys):
    assert cli.main(["train", "--out-model", "x.json"]) == 2
    err = capsys.readouterr().err
    assert "usage:" in err and "--corpus" in err


def test_missing_file(tmp_path, capsys):
    rc = cli.main(["train", "--corpus", str(tmp_path / "nope.tsv"), "--out-model", str(tmp_path / "m")])
    assert rc == 4
    assert "file error" in capsys.readouterr().err


def test_malformed_corpus(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("1.0 no tab here\n")
    assert cli.main(["train", "--corpus", str(bad), "--out-model", str(tmp_path / "m")]) == 5
    assert "line 1" in capsys.readouterr().err


def test_config_rejects_unknown_key(tmp_path, synth_files, capsys):
    corpus, _ = synth_files
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"topcs": 3}))
    rc = cli.main(["train", "--corpus", str(corpus), "--out-model", str(tmp_path / "m"), "--config", str(cfg)])
    assert rc == 3
    assert "topcs" in capsys.readouterr().err


def test_invalid_value_is_config_error(tmp_path, synth_files, capsys):
    corpus, _ = synth_files
    rc = cli.main(["train", "--corpus", str(corpus), "--out-model", str(tmp_path / "m"), "--alpha", "-1"])
    assert rc == 3
    assert capsys.readouterr().err.startswith("config error")


def test_flags_override_config_and_replay(tmp_path, synth_files):
    corpus, _ = synth_files
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"topics": 4, "sweeps": 20, "burn_in": 10}))
    dumped, m1, m2 = tmp_path / "resolved.json", tmp_path / "m1.json", tmp_path / "m2.json"
    assert cli.main(["train", "--corpus", str(corpus), "--out-model", str(m1), "--config", str(cfg),
                     "--topics", "3", "--dump-config", str(dumped)]) == 0
    resolved = json.loads(dumped.read_text())
    assert resolved["topics"] == 3 and resolved["sweeps"] == 20 and resolved["alpha"] == 1.0
    resolved["out_model"] = str(m2)
    dumped.write_text(json.dumps(resolved))
    assert cli.main(["train", "--config", str(dumped)]) == 0
    assert core.load_model(m1) == core.load_model(m2)


def test_bench_runs(tmp_path, capsys):
    report = tmp_path / "r.json"
    rc = cli.main(["bench", "--repeats", "1", "--shards", "2", "--out-report", str(report),
                   "--out-csv", str(tmp_path / "r.csv"), *FAST])
    assert rc == 0
    data = json.loads(report.read_text())
    assert set(data["mean"]) == {"nonparallel", "naive", "simple", "weighted", "naive_stressed"}
    assert "weighted" in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "parslda", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("synth", "train", "predict", "ptrain", "bench"):
        assert cmd in out.stdout
