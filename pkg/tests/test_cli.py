import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from drlcausal.cli import main
from drlcausal.io import read_dataset, read_report


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"g_hidden": [8], "c_hidden": [8], "c_out": 4, "d_hidden": [4], "f_hidden": [8], "batch_size": 128}))
    return path


def test_generate_train_eval_pipeline(tmp_path, small_config):
    data, ckpt, report = tmp_path / "a.csv", tmp_path / "m.ckpt", tmp_path / "r.json"
    assert run("generate", "--scenario", "A", "--n", 2000, "--seed", 1, "--out", data) == 0
    assert read_dataset(data).n == 2000
    assert run("train", "--data", data, "--out", ckpt, "--config", small_config, "--epochs", 3, "--wc", 0.5, "--rep-dim", 4, "--seed", 2) == 0
    assert run("eval", "--ckpt", ckpt, "--data", data, "--report", report, "--split", "random") == 0
    doc = read_report(report)
    assert doc["request"]["seed"] == 2
    for key in ("pcc_before", "mcc_nonl_after", "eps_mtef_train", "eps_mtef_test", "d_fake"):
        assert np.isfinite(doc["metrics"][key])


def test_train_is_reproducible(tmp_path, small_config):
    data = tmp_path / "b.csv"
    run("generate", "--scenario", "B", "--n", 300, "--seed", 0, "--out", data)
    for name in ("one", "two"):
        assert run("train", "--data", data, "--out", tmp_path / name, "--config", small_config, "--epochs", 2, "--split", "quantile80") == 0
    assert (tmp_path / "one").read_bytes() == (tmp_path / "two").read_bytes()


def test_mtef_csv(tmp_path, small_config):
    data, ckpt, out = tmp_path / "d.csv", tmp_path / "m.ckpt", tmp_path / "curve.csv"
    run("generate", "--scenario", "D", "--n", 300, "--seed", 0, "--out", data, "--d", 4)
    run("train", "--data", data, "--out", ckpt, "--config", small_config, "--epochs", 1)
    assert run("mtef", "--ckpt", ckpt, "--data", data, "--out", out, "--levels", 7) == 0
    rows = list(csv.DictReader(out.open()))
    assert list(rows[0]) == ["t_level", "dt", "mtef_pred", "mtef_true"]
    assert len(rows) == 7
    levels = [float(r["t_level"]) for r in rows]
    assert levels == sorted(levels)


def test_bench_full_matrix(tmp_path, small_config):
    out = tmp_path / "bench.json"
    assert run("bench", "--scenarios", "A,B,C,D", "--methods", "drl,msm,icpw,naive", "--repeats", 1, "--seed", 0,
               "--out", out, "--n", 200, "--epochs", 1, "--config", small_config) == 0
    doc = read_report(out)
    assert len(doc["aggregates"]) == 16
    assert {(c["scenario"], c["method"]) for c in doc["aggregates"]} == {(s, m) for s in "ABCD" for m in ("drl", "msm", "icpw", "naive")}


def test_gridsearch(tmp_path, small_config):
    data, space, out = tmp_path / "d.csv", tmp_path / "space.json", tmp_path / "g.json"
    run("generate", "--scenario", "A", "--n", 200, "--seed", 0, "--out", data, "--d", 3)
    space.write_text(json.dumps({"w_c": [0.1, 1.0], "epochs": [1]}))
    assert run("gridsearch", "--data", data, "--space", space, "--out", out, "--config", small_config) == 0
    doc = read_report(out)
    assert len(doc["results"]) == 2
    assert doc["best_config"]["w_c"] in (0.1, 1.0)


def test_unknown_scenario_is_a_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        run("generate", "--scenario", "E", "--n", 10, "--seed", 0, "--out", tmp_path / "x.csv")
    assert info.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_errors_are_one_categorised_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert run("train", "--data", bad, "--out", tmp_path / "m") == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: format:") and "\n" not in err
    assert run("eval", "--ckpt", tmp_path / "missing", "--data", bad, "--report", tmp_path / "r") == 1
    assert capsys.readouterr().err.startswith("error: io:")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"rep_dim": 0}))
    run("generate", "--scenario", "A", "--n", 50, "--seed", 0, "--out", tmp_path / "ok.csv")
    assert run("train", "--data", tmp_path / "ok.csv", "--out", tmp_path / "m", "--config", cfg) == 1
    assert capsys.readouterr().err.startswith("error: config:")
    assert not (tmp_path / "m").exists()


def test_module_entry_point(tmp_path):
    out = tmp_path / "c.csv"
    proc = subprocess.run([sys.executable, "-m", "drlcausal", "generate", "--scenario", "C", "--n", "15", "--seed", "4", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert read_dataset(out).n == 15
