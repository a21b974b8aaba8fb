import csv
import json
import logging
import os

import pytest

from hydalearn.cli import epoch_means, main
from hydalearn.trainer import RunLog

from test_experiments import tiny_spec

SMALL = ["--exp2", "--n-train", "64", "--n-val", "32", "--n-test", "32", "--max-epochs", "2"]


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_generate_row_counts_and_byte_identity(in_tmp):
    assert main(["generate", "--exp2", "--seed", "7", "--out", "a"]) == 0
    assert main(["generate", "--exp2", "--seed", "7", "--out", "b"]) == 0
    for name in ("train.csv", "val.csv", "test.csv", "schema.json", "meta.json"):
        assert (in_tmp / "a" / name).read_bytes() == (in_tmp / "b" / name).read_bytes()
    rows = [sum(1 for _ in open(in_tmp / "a" / f"{n}.csv")) - 1 for n in ("train", "val", "test")]
    assert rows == [1000, 200, 200]
    assert json.loads((in_tmp / "a/meta.json").read_text())["toy"]["seed"] == 7


def test_generate_exp1_row_counts(in_tmp):
    assert main(["generate", "--exp1", "--seed", "7", "--out", "d"]) == 0
    meta = json.loads((in_tmp / "d/meta.json").read_text())
    assert meta["rows"] == {"train": 10000, "val": 2000, "test": 2000}
    header = (in_tmp / "d/train.csv").open().readline().strip().split(",")
    assert len(header) == 75 + 25 + 25


def test_train_from_generated_directory(in_tmp):
    main(["generate", "--exp2", "--n-train", "64", "--n-val", "32", "--n-test", "32", "--out", "data"])
    assert main(["train", "--data", "data", "--strategy", "static", "--ratio", "2", "--max-epochs", "1",
                 "--out", "run"]) == 0
    summary = json.loads((in_tmp / "run/summary.json").read_text())
    assert summary["status"] == "ok" and summary["strategy_params"] == {"ratio": 2.0}


def test_train_hydalearn_logs_budget(in_tmp):
    assert main(["train", *SMALL, "--strategy", "hydalearn", "--beta", "6", "--lr", "0.01", "--out", "r"]) == 0
    log = RunLog.read_jsonl(in_tmp / "r/runlog.jsonl")
    assert log.steps
    for rec in log.steps:
        assert abs(rec["w_m"] + rec["w_a"] - rec["W_effective"]) < 1e-9
    for name in ("config.json", "summary.json", "checkpoint.bin"):
        assert (in_tmp / "r" / name).exists()


def test_stl_warns_about_beta(in_tmp, caplog):
    with caplog.at_level(logging.WARNING):
        assert main(["train", *SMALL, "--strategy", "stl", "--beta", "3", "--out", "s"]) == 0
    assert "--beta does not apply" in caplog.text
    cfg = json.loads((in_tmp / "s/config.json").read_text())
    assert cfg["train"]["strategy_params"] == {}


def test_rerun_is_byte_identical(in_tmp):
    args = ["train", *SMALL, "--strategy", "olaux", "--seed", "3"]
    assert main(args + ["--out", "one"]) == 0
    assert main(args + ["--out", "two"]) == 0
    for name in ("summary.json", "runlog.jsonl", "config.json", "checkpoint.bin"):
        assert (in_tmp / "one" / name).read_bytes() == (in_tmp / "two" / name).read_bytes()


def test_echoed_config_reproduces_run(in_tmp):
    assert main(["train", *SMALL, "--strategy", "hydalearn", "--beta", "3", "--seed", "2", "--out", "a"]) == 0
    assert main(["train", "--config", "a/config.json", "--out", "b"]) == 0
    assert (in_tmp / "a/summary.json").read_bytes() == (in_tmp / "b/summary.json").read_bytes()


def test_precedence_flag_over_file_over_default(in_tmp):
    main(["train", *SMALL, "--strategy", "stl", "--out", "base"])
    cfg = json.loads((in_tmp / "base/config.json").read_text())
    assert cfg["train"]["learning_rate"] == 0.01
    cfg["train"]["learning_rate"] = 0.05
    (in_tmp / "c.json").write_text(json.dumps(cfg))
    main(["train", "--config", "c.json", "--out", "file"])
    main(["train", "--config", "c.json", "--lr", "0.02", "--out", "flag"])
    lr = {d: json.loads((in_tmp / d / "config.json").read_text())["train"]["learning_rate"] for d in ("file", "flag")}
    assert lr == {"file": 0.05, "flag": 0.02}


def test_config_errors_exit_2(in_tmp, capsys):
    assert main(["train", *SMALL, "--lr", "-1", "--out", "x"]) == 2
    assert "learning_rate" in capsys.readouterr().err
    (in_tmp / "bad.json").write_text(json.dumps({"train": {"lrate": 1}}))
    assert main(["train", "--config", "bad.json", "--out", "y"]) == 2
    assert "lrate" in capsys.readouterr().err
    assert main(["train", "--config", "missing.json", "--out", "z"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["train", "--strategy", "nope", "--out", "w"])
    assert info.value.code == 2


def test_outputs_stay_under_out(in_tmp):
    main(["train", *SMALL, "--strategy", "gcosim", "--out", "only/here"])
    main(["plotdata", "--runs", "only", "--out", "only/plots"])
    assert sorted(os.listdir(in_tmp)) == ["only"]


@pytest.fixture
def tiny_experiment(in_tmp):
    tiny_spec(strategies=("static", "stl"), max_epochs=1).save(in_tmp / "tiny.json")
    return "tiny.json"


def test_suite_cardinality(in_tmp, tiny_experiment, capsys):
    assert main(["suite", "--experiment", tiny_experiment, "--seeds", "0", "1", "--out", "s"]) == 0
    assert len(list((in_tmp / "s/tiny").glob("*/seed*"))) == 4
    assert "static" in capsys.readouterr().out
    assert (in_tmp / "s/tiny_experiment.json").exists()


def test_ablation_emits_four_arms(in_tmp, tiny_experiment):
    assert main(["ablation", "--experiment", tiny_experiment, "--seeds", "0", "--out", "a"]) == 0
    rows = read_csv(in_tmp / "a/tiny/ablation.csv")
    assert sorted({r["label"] for r in rows}) == ["ExpImp-0", "ExpImp-1", "ExpImp-2", "ExpImp-3"]
    assert len(read_csv(in_tmp / "a/tiny/ablation_summary.csv")) == 4


def test_grid_row_count(in_tmp, tiny_experiment):
    assert main(["grid", "--experiment", tiny_experiment, "--strategy", "static", "--seeds", "0",
                 "--grid", "ratio=1,2,4", "--grid", "lr=0.01,0.05", "--out", "g"]) == 0
    assert len(read_csv(in_tmp / "g/tiny/grid_static.csv")) == 6
    assert main(["grid", "--experiment", tiny_experiment, "--strategy", "static",
                 "--grid", "beta=1", "--out", "g2"]) == 2


class TestPlotdata:
    def _runs(self, in_tmp):
        main(["train", *SMALL, "--strategy", "static", "--ratio", "3", "--out", "runs/static"])
        main(["train", *SMALL, "--strategy", "stl", "--out", "runs/stl"])
        main(["train", *SMALL, "--strategy", "hydalearn", "--out", "runs/hyda"])
        assert main(["plotdata", "--runs", "runs", "--out", "plots"]) == 0
        return read_csv(in_tmp / "plots/weights_epoch.csv")

    def test_series(self, in_tmp):
        rows = self._runs(in_tmp)
        static = [float(r["mean_w_a_over_W"]) for r in rows if r["label"] == "static"]
        stl = [float(r["mean_w_a_over_W"]) for r in rows if r["label"] == "stl"]
        assert static and all(v == pytest.approx(0.25, abs=1e-15) for v in static)
        assert stl and all(v == 0.0 for v in stl)
        deltas = read_csv(in_tmp / "plots/deltas.csv")
        assert deltas and {r["label"] for r in deltas} == {"hydalearn"}
        curves = read_csv(in_tmp / "plots/val_curves.csv")
        assert {r["label"] for r in curves} == {"static", "stl", "hydalearn"}

    def test_epoch_means_match_streaming_oracle(self, in_tmp):
        self._runs(in_tmp)
        log = RunLog.read_jsonl(in_tmp / "runs/hyda/runlog.jsonl")
        # Welford running mean per epoch, independent of the library's sum/count route
        oracle, count = {}, {}
        for rec in log.steps:
            e, x = rec["epoch"], rec["w_a"] / rec["W_effective"]
            count[e] = count.get(e, 0) + 1
            oracle[e] = oracle.get(e, 0.0) + (x - oracle.get(e, 0.0)) / count[e]
        got = dict(epoch_means(log))
        assert got.keys() == oracle.keys()
        for e in got:
            assert abs(got[e] - oracle[e]) < 1e-12

    def test_missing_logs(self, in_tmp, capsys):
        os.makedirs("empty")
        assert main(["plotdata", "--runs", "empty", "absent", "--out", "p"]) == 1
        err = capsys.readouterr().err
        assert "empty" in err and "absent" in err
