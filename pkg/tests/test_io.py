import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from drlcausal import io as dio
from drlcausal.drl import DrlConfig, predict, train
from drlcausal.errors import FormatError
from drlcausal.synthgen import Dataset, ScenarioSpec, make_scenario

TINY = DrlConfig(epochs=2, batch_size=32, rep_dim=3, g_hidden=(5,), c_hidden=(4,), c_out=3, d_hidden=(3,), f_hidden=(5,))


@pytest.fixture(scope="module")
def trained():
    data, gt = make_scenario(ScenarioSpec("B", n=120, seed=3, d=4))
    model, _ = train(data, TINY)
    return model, data


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = Dataset(rng.normal(size=(30, 3)) * 1e5, rng.normal(size=30) / 7, rng.standard_cauchy(size=30))
    path = tmp_path / "d.csv"
    dio.write_dataset(path, data)
    back = dio.read_dataset(path)
    assert back.x.tobytes() == data.x.tobytes()
    assert back.t.tobytes() == data.t.tobytes()
    assert back.y.tobytes() == data.y.tobytes()
    assert path.read_text().splitlines()[0] == "x0,x1,x2,t,y"


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=30, deadline=None)
@given(x=arrays(np.float64, (5, 2), elements=finite), ty=arrays(np.float64, (2, 5), elements=finite))
def test_csv_text_round_trip_is_lossless(x, ty):
    data = Dataset(x, ty[0], ty[1])
    text = dio.dataset_to_csv(data)
    rows = np.array([[float(v) for v in line.split(",")] for line in text.splitlines()[1:]])
    assert np.array_equal(rows, np.column_stack([x, ty[0], ty[1]]))


def test_truth_sidecar(tmp_path):
    data, gt = make_scenario(ScenarioSpec("D", n=20, seed=1, d=3))
    path = tmp_path / "d.csv"
    dio.write_dataset(path, data, {"ground_truth": gt.to_dict(), "outcome_kind": "continuous"})
    back = dio.ground_truth_from_meta(dio.read_truth(path))
    assert np.array_equal(back.w_xy, gt.w_xy) and back.y_form == "nonL"
    assert dio.read_truth(tmp_path / "missing.csv") is None


@pytest.mark.parametrize(
    "text, match",
    [
        ("", "empty"),
        ("a,b,t,y\n1,2,3,4\n", "header"),
        ("x0,t,y\n", "no data"),
        ("x0,t,y\n1,2,abc\n", "non-numeric"),
        ("x0,t,y\n1,2\n", "fields"),
        ("x0,t,y\n1,2,nan\n", "non-finite"),
    ],
)
def test_malformed_csv(tmp_path, text, match):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(FormatError, match=match):
        dio.read_dataset(path)


def test_checkpoint_round_trip_predictions(tmp_path, trained):
    model, data = trained
    path = tmp_path / "m.ckpt"
    dio.save_checkpoint(path, model)
    back = dio.load_checkpoint(path)
    probe_t = np.linspace(-3, 3, data.n)
    assert predict(back, data.x, probe_t).tobytes() == predict(model, data.x, probe_t).tobytes()
    assert back.config == model.config


def test_truncated_checkpoint(tmp_path, trained):
    model, _ = trained
    text = json.dumps(dio.model_to_dict(model))
    path = tmp_path / "m.ckpt"
    for cut in (0, 10, len(text) // 2, len(text) - 1):
        path.write_text(text[:cut])
        with pytest.raises(FormatError):
            dio.load_checkpoint(path)


def test_checkpoint_validation(trained):
    model, _ = trained
    doc = dio.model_to_dict(model)
    with pytest.raises(FormatError, match="version"):
        dio.model_from_dict({**doc, "version": 99})
    with pytest.raises(FormatError):
        dio.model_from_dict({"format": "something-else"})
    broken = json.loads(json.dumps(doc))
    broken["networks"]["c"]["layers"][0]["weight"] = [[0.0]]
    with pytest.raises(FormatError):
        dio.model_from_dict(broken)
    broken = json.loads(json.dumps(doc))
    del broken["networks"]["f"]
    with pytest.raises(FormatError):
        dio.model_from_dict(broken)


def test_report_serialisation(tmp_path):
    doc = {"format": dio.REPORT_FORMAT, "version": dio.REPORT_VERSION, "b": np.float64(np.nan), "a": np.arange(3)}
    path = tmp_path / "r.json"
    dio.write_report(path, doc)
    assert dio.read_report(path) == {"format": dio.REPORT_FORMAT, "version": 1, "a": [0, 1, 2], "b": None}
    assert dio.report_to_text(doc) == dio.report_to_text(dict(reversed(list(doc.items()))))
    path.write_text('{"format": "x"}')
    with pytest.raises(FormatError):
        dio.read_report(path)


def test_failed_write_keeps_previous_content(tmp_path, monkeypatch):
    target = tmp_path / "out.json"
    target.write_text("old")

    def boom(*_):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        dio.atomic_write(target, "new" * 1000)
    assert target.read_text() == "old"
    assert os.listdir(tmp_path) == ["out.json"]


def test_killed_writer_never_leaves_partial_target(tmp_path):
    target = tmp_path / "out.json"
    target.write_text("old")
    script = (
        "import os, sys\n"
        "from drlcausal import io as dio\n"
        "os.fsync = lambda fd: os._exit(9)\n"
        "dio.atomic_write(sys.argv[1], 'x' * 5_000_000)\n"
    )
    proc = subprocess.run([sys.executable, "-c", script, str(target)])
    assert proc.returncode == 9
    assert target.read_text() == "old"
    dio.atomic_write(target, "new")
    assert target.read_text() == "new"
