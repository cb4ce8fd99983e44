from __future__ import annotations

import csv
import json
import math

import pytest

from formscreen.cli import main

COMPACT = {
    "seed": 0,
    "pretrain": {"max_epochs": 30, "patience": 30, "hidden": 16, "head_hidden": 8},
    "train": {"max_epochs": 15, "patience": 15, "hidden": [16, 8], "initial_lr": 1e-3},
    "gen": {"n_compositions": 50},
    "rfr": {"n_trees": 10},
}


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(row for row in fh if not row.startswith("#")))


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps(COMPACT))
    c = ["--config", str(cfg)]
    assert main(["synth", "--n", "30", "--corpus-size", "12", "--out", str(d / "data")]) == 0
    assert main(["pretrain", *c, "--corpus", str(d / "data/corpus.csv"), "--out", str(d / "enc")]) == 0
    assert main(["train", *c, "--dataset", str(d / "data/dataset.csv"), "--model", str(d / "enc/encoder.fsm"),
                 "--out", str(d / "model")]) == 0
    assert main(["gen", *c, "--out", str(d / "pool")]) == 0
    assert main(["screen", *c, "--model", str(d / "model/model.fsm"), "--pool", str(d / "pool/pool.csv"),
                 "--out", str(d / "screen")]) == 0
    assert main(["interpret", *c, "--predictions", str(d / "screen/predictions.csv"),
                 "--out", str(d / "interp")]) == 0
    return d, c


def test_pretrain_outputs(run):
    d, c = run
    hist = [float(r["mse"]) for r in _rows(d / "enc/pretrain_history.csv")]
    assert len(hist) == 30
    running = [min(hist[:k + 1]) for k in range(len(hist))]
    assert running[-1] < hist[0]
    assert main(["pretrain", *c, "--corpus", str(d / "data/corpus.csv"), "--out", str(d / "enc2")]) == 0
    assert (d / "enc2/encoder.fsm").read_bytes() == (d / "enc/encoder.fsm").read_bytes()


def test_train_outputs(run):
    d, _ = run
    metrics = _rows(d / "model/metrics.csv")
    assert [r["split"] for r in metrics] == ["train", "test"]
    assert [int(r["n"]) for r in metrics] == [24, 6]
    assert all(math.isfinite(float(r["rmse_mah_g"])) for r in metrics)
    parity = _rows(d / "model/parity.csv")
    assert len(parity) == 30 and len({r["id"] for r in parity}) == 30
    assert len(_rows(d / "model/train_history.csv")) == 15


def test_sorted_split_holds_out_highest_loadings(run, tmp_path):
    d, c = run
    assert main(["train", *c, "--dataset", str(d / "data/dataset.csv"), "--model", str(d / "enc/encoder.fsm"),
                 "--split", "sorted", "--out", str(tmp_path)]) == 0
    data = {r["id"]: float(r["lii_wtpct"]) for r in _rows(d / "data/dataset.csv")}
    parity = _rows(tmp_path / "parity.csv")
    test_load = [data[r["id"]] for r in parity if r["split"] == "test"]
    train_load = [data[r["id"]] for r in parity if r["split"] == "train"]
    assert len(test_load) == 6 and min(test_load) >= max(train_load)


def test_eval(run, tmp_path):
    d, c = run
    assert main(["eval", *c, "--dataset", str(d / "data/dataset.csv"), "--model", str(d / "model/model.fsm"),
                 "--out", str(tmp_path)]) == 0
    assert _rows(tmp_path / "eval_metrics.csv")[0]["n"] == "30"


def test_screen_outputs(run):
    d, _ = run
    preds = _rows(d / "screen/predictions.csv")
    assert len(preds) == 50 * 7 * 2
    assert [int(r["rank"]) for r in preds] == list(range(1, len(preds) + 1))
    for r in _rows(d / "screen/shortlist.csv"):
        assert 40 <= float(r["lii_wtpct"]) <= 45 and float(r["predicted_mah_g"]) > 210
    assert (d / "screen/scatter.svg").read_text().startswith("<svg")


def test_interpret_outputs(run):
    d, _ = run
    scc = _rows(d / "interp/scc.csv")
    per_bin = [r for r in scc if r["constituent"] != "lii_wtpct"]
    assert len(per_bin) == 7 * 8
    assert all(-1 <= float(r["rho"]) <= 1 for r in per_bin)
    assert [r["loading_bin"] for r in scc if r["constituent"] == "lii_wtpct"] == ["40-46", ">46"]
    assert len(_rows(d / "interp/quartiles.csv")) == 8


def test_default_gen_pool_size(tmp_path):
    assert main(["gen", "--out", str(tmp_path)]) == 0
    assert len(_rows(tmp_path / "pool.csv")) == 33_740


def test_missing_corpus_is_input_error(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert main(["pretrain", "--corpus", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_bad_config_is_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"learning_rate": 1}}))
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert main(["train", "--config", str(cfg), "--dataset", "x", "--model", "y", "--out", str(tmp_path / "t")]) == 2
    cfg.write_text(json.dumps({"bogus": {}}))
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 2
    assert not (tmp_path / "t").exists() and not (tmp_path / "g").exists()


def test_screen_needs_trained_model(run, tmp_path):
    d, c = run
    assert main(["screen", *c, "--model", str(d / "enc/encoder.fsm"), "--pool", str(d / "pool/pool.csv"),
                 "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_3_without_outputs(run, tmp_path):
    d, c = run
    lines = (d / "data/dataset.csv").read_text().splitlines()
    head = lines[0].split(",")
    row = lines[1].split(",")
    row[head.index("capacity_mah_g")] = "1e200"
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join([lines[0], ",".join(row)] + lines[2:]) + "\n")
    assert main(["train", *c, "--dataset", str(bad), "--model", str(d / "enc/encoder.fsm"),
                 "--out", str(tmp_path / "o")]) == 3
    assert not (tmp_path / "o").exists()


def test_report(run, tmp_path):
    d, c = run
    assert main(["report", *c, "--dataset", str(d / "data/dataset.csv"), "--model", str(d / "enc/encoder.fsm"),
                 "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "comparison.csv")
    assert sorted(r["model"] for r in rows) == ["FGCN", "RFR", "SVR"]
    maes = [float(r["mae_mah_g"]) for r in rows]
    assert maes == sorted(maes)
