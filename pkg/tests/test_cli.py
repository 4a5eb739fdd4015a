import csv
import json
import math
import shutil
import time

import numpy as np
import pytest

from landmark_forest import __version__, cli
from landmark_forest.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main


def rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Simulated data and a trained model shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--model", "I", "--n", "400", "--n-test", "40", "--seed", "3",
                 "--out", str(root / "sim")]) == EXIT_OK
    assert main(["train", "--data", str(root / "sim"), "--landmark", "fixed:2", "--B", "12",
                 "--seed", "1", "--out", str(root / "train")]) == EXIT_OK
    return root


def test_simulate_writes_cohorts_truth_and_config(workdir):
    sim = workdir / "sim"
    for name in ("train_outcomes.csv", "train_longitudinal.csv", "test_outcomes.csv", "schema.json", "truth.csv"):
        assert (sim / name).exists()
    assert len(rows(sim / "train_outcomes.csv")) == 400
    truth = rows(sim / "truth.csv")
    assert len({r["id"] for r in truth}) == 40
    assert all(float(r["S_true"]) == 1.0 for r in truth if float(r["t"]) == 0.0)
    cfg = json.loads((sim / "run_config.json").read_text())
    assert cfg["command"] == "simulate" and cfg["seed"] == 3 and cfg["version"] == __version__
    assert "jobs" not in cfg and "out" not in cfg


def test_train_defaults_and_summary(workdir, capsys):
    assert main(["train", "--data", str(workdir / "sim"), "--landmark", "fixed:2", "--B", "3",
                 "--out", str(workdir / "train_defaults")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "at risk:" in out and "trees: 3" in out
    bundle = json.loads((workdir / "train_defaults" / "model.json").read_text())
    params = bundle["ensemble"]["params"]
    p = len(bundle["columns"])
    assert params["min_node_size"] == 15 and params["mtry"] == math.ceil(math.sqrt(p))
    assert f"mtry: {params['mtry']}" in out and f"features: {p} of {len(bundle['feature_names'])}" in out


def test_predict_curves_and_times(workdir):
    out = workdir / "pred"
    assert main(["predict", "--model", str(workdir / "train" / "model.json"), "--data", str(workdir / "sim"),
                 "--prefix", "test", "--out", str(out)]) == EXIT_OK
    pred = rows(out / "predictions.csv")
    by_id = {}
    for r in pred:
        by_id.setdefault(r["id"], []).append((float(r["t"]), float(r["S"])))
    assert len(by_id) == 40
    for curve in by_id.values():
        t, s = zip(*curve)
        assert t[0] == 0.0 and s[0] == 1.0 and all(np.diff(s) <= 0) and min(s) > 0
    assert main(["predict", "--model", str(workdir / "train" / "model.json"), "--data", str(workdir / "sim"),
                 "--prefix", "test", "--times", "0.5,1", "--mode", "E2", "--out", str(workdir / "pred2")]) == 0
    assert len(rows(workdir / "pred2" / "predictions.csv")) == 80


def test_predict_empty_query(workdir):
    empty = workdir / "empty"
    empty.mkdir()
    for name in ("outcomes", "longitudinal", "events"):
        src = workdir / "sim" / f"test_{name}.csv"
        header = src.read_text().splitlines()[0]
        (empty / f"q_{name}.csv").write_text(header + "\n")
    out = workdir / "pred_empty"
    assert main(["predict", "--model", str(workdir / "train" / "model.json"), "--data", str(empty),
                 "--prefix", "q", "--schema", str(workdir / "sim" / "schema.json"), "--out", str(out)]) == EXIT_OK
    assert (out / "predictions.csv").read_text() == "id,t,S\n"


def test_evaluate_grid_and_truth_metrics(workdir):
    out = workdir / "eval"
    assert main(["evaluate", "--model", str(workdir / "train" / "model.json"), "--data", str(workdir / "sim"),
                 "--prefix", "test", "--interval", "0,15", "--grid-size", "50", "--truth",
                 str(workdir / "sim" / "truth.csv"), "--normalize", "--out", str(out)]) == EXIT_OK
    con = rows(out / "concordance.csv")
    assert len(con) == 50 and float(con[0]["t"]) == pytest.approx(0.3) and float(con[-1]["t"]) == 15.0
    summary = json.loads((out / "concordance.json").read_text())
    assert summary["interval"] == [0.0, 15.0] and summary["n_subjects"] == 40
    for key in ("imae", "imse", "ibs"):
        assert 0 <= summary[key] < 1


def test_evaluate_out_of_bag_requires_training_cohort(workdir):
    model = str(workdir / "train" / "model.json")
    assert main(["evaluate", "--model", model, "--data", str(workdir / "sim"), "--oob",
                 "--out", str(workdir / "oob")]) == EXIT_OK
    assert json.loads((workdir / "oob" / "concordance.json").read_text())["integrated"] is not None
    assert main(["evaluate", "--model", model, "--data", str(workdir / "sim"), "--prefix", "test", "--oob",
                 "--out", str(workdir / "oob_bad")]) == EXIT_DATA


def test_vimp_ranking(workdir):
    out = workdir / "vimp"
    assert main(["vimp", "--model", str(workdir / "train" / "model.json"), "--data", str(workdir / "sim"),
                 "--variables", "Z1,Z5,W1_2", "--marker-groups", "--n-perm", "4", "--out", str(out)]) == EXIT_OK
    table = rows(out / "vimp.csv")
    assert list(table[0]) == ["variable", "mean_drop", "sd_drop", "n_eligible", "scheme"]
    names = [r["variable"] for r in table]
    assert {"Z1", "Z5", "W1_2", "W1"} <= set(names)
    means = [float(r["mean_drop"]) for r in table if r["mean_drop"]]
    assert means == sorted(means, reverse=True)
    assert main(["vimp", "--model", str(workdir / "train" / "model.json"), "--data", str(workdir / "sim"),
                 "--variables", "nope", "--n-perm", "2", "--out", str(workdir / "vimp_bad")]) == EXIT_DATA


def test_figures_are_opt_in(workdir):
    model = str(workdir / "train" / "model.json")
    args = ["predict", "--model", model, "--data", str(workdir / "sim"), "--prefix", "test"]
    assert main(args + ["--out", str(workdir / "nofig")]) == 0
    assert not list((workdir / "nofig").glob("*.png"))
    assert main(args + ["--figures", "--out", str(workdir / "fig")]) == 0
    assert (workdir / "fig" / "predictions.png").stat().st_size > 0


def test_benchmark_smoke(tmp_path):
    start = time.perf_counter()
    assert main(["benchmark", "--model", "I", "--n", "50", "--B", "25", "--replicates", "1", "--n-test", "100",
                 "--out", str(tmp_path / "bm")]) == EXIT_OK
    assert time.perf_counter() - start < 30
    table = rows(tmp_path / "bm" / "benchmark.csv")
    assert [r["method"] for r in table] == ["Tr", "E1", "E2"]
    for r in table:
        assert all(math.isfinite(float(r[m])) for m in ("imae", "imse", "ibs", "icon"))
    assert len(rows(tmp_path / "bm" / "replicates.csv")) == 3


def test_rerun_is_byte_identical(workdir, tmp_path):
    args = ["train", "--data", str(workdir / "sim"), "--landmark", "fixed:2", "--B", "5", "--seed", "8"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    for name in ("model.json", "run_config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestConfigFiles:
    def test_json_values_override_flags(self, workdir, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"B": 2, "seed": 4}))
        assert main(["train", "--data", str(workdir / "sim"), "--landmark", "fixed:2", "--B", "9",
                     "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
        params = json.loads((tmp_path / "o" / "model.json").read_text())["ensemble"]["params"]
        assert params["B"] == 2 and params["seed"] == 4
        assert json.loads((tmp_path / "o" / "run_config.json").read_text())["B"] == 2

    def test_toml_command_table(self, workdir, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text('seed = 6\n[train]\nmin-node-size = 20\nB = 3\n')
        assert main(["train", "--data", str(workdir / "sim"), "--landmark", "fixed:2",
                     "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
        params = json.loads((tmp_path / "o" / "model.json").read_text())["ensemble"]["params"]
        assert (params["B"], params["min_node_size"], params["seed"]) == (3, 20, 6)

    @pytest.mark.parametrize("content,suffix", [('{"trees": 3}', ".json"), ('{"B": "many"}', ".json"),
                                                ("B = [", ".toml"), ('{"mode": "E3"}', ".json")])
    def test_bad_config_is_a_usage_error(self, workdir, tmp_path, content, suffix):
        cfg = tmp_path / f"bad{suffix}"
        cfg.write_text(content)
        assert main(["train", "--data", str(workdir / "sim"), "--landmark", "fixed:2", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == EXIT_USAGE


class TestExitCodes:
    def test_help_and_version(self, capsys):
        assert main(["--version"]) == EXIT_OK
        assert __version__ in capsys.readouterr().out
        assert main(["train", "--help"]) == EXIT_OK

    @pytest.mark.parametrize("argv", [[], ["fly"], ["train", "--out", "x"], ["simulate", "--model", "VII",
                                                                              "--out", "x"],
                                      ["simulate", "--model", "I", "--jobs", "0", "--out", "x"],
                                      ["simulate", "--model", "III", "--out", "x"]])
    def test_usage_errors(self, argv, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(argv) == EXIT_USAGE

    def test_missing_data_is_a_data_error(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "none"), "--landmark", "fixed:2",
                     "--out", str(tmp_path / "o")]) == EXIT_DATA

    def test_unknown_event_landmark(self, workdir, tmp_path):
        assert main(["train", "--data", str(workdir / "sim"), "--landmark", "event:X",
                     "--out", str(tmp_path / "o")]) != EXIT_OK

    def test_bundle_version_refused(self, workdir, tmp_path):
        bundle = json.loads((workdir / "train" / "model.json").read_text())
        bundle["version"] = 99
        path = tmp_path / "old.json"
        path.write_text(json.dumps(bundle))
        assert main(["predict", "--model", str(path), "--data", str(workdir / "sim"), "--prefix", "test",
                     "--out", str(tmp_path / "o")]) == EXIT_DATA
        path.write_text("{not json")
        assert main(["predict", "--model", str(path), "--data", str(workdir / "sim"), "--prefix", "test",
                     "--out", str(tmp_path / "o")]) == EXIT_DATA

    def test_schema_mismatch(self, workdir, tmp_path):
        other = tmp_path / "other"
        assert main(["simulate", "--model", "III", "--scenario", "B", "--n", "30", "--n-test", "10",
                     "--mc-reps", "100", "--out", str(other)]) == EXIT_OK
        assert main(["predict", "--model", str(workdir / "train" / "model.json"), "--data", str(other),
                     "--prefix", "test", "--out", str(tmp_path / "o")]) == EXIT_DATA

    def test_numeric_failure(self, workdir, tmp_path, monkeypatch):
        def boom(args):
            raise FloatingPointError("overflow")

        monkeypatch.setattr(cli, "cmd_train", boom)
        assert main(["train", "--data", str(workdir / "sim"), "--landmark", "fixed:2",
                     "--out", str(tmp_path / "o")]) == EXIT_NUMERIC
