import numpy as np
import pytest

from drlcausal.drl import DrlConfig
from drlcausal.errors import ConfigError, SearchError, SplitError
from drlcausal.harness import (
    METRIC_KEYS,
    SplitSpec,
    aggregate,
    evaluate_method,
    expand_space,
    grid_search,
    run_benchmark,
    split,
)
from drlcausal.io import report_to_text
from drlcausal.synthgen import Dataset, ScenarioSpec, make_scenario

FAST = DrlConfig(epochs=2, batch_size=64, g_hidden=(8,), c_hidden=(8,), c_out=4, d_hidden=(4,), f_hidden=(8,), rep_dim=3)


def data_of(n, seed=0, scenario="A", d=10):
    return make_scenario(ScenarioSpec(scenario, n=n, seed=seed, d=d))[0]


def test_random_split_sizes():
    tr, va, te = split(data_of(1000), SplitSpec("random", 3))
    assert (len(tr), len(va), len(te)) == (600, 200, 200)
    assert len(np.unique(np.concatenate([tr, va, te]))) == 1000


def test_quantile_split_puts_high_treatments_in_test():
    data = data_of(1000, seed=1)
    tr, va, te = split(data, SplitSpec("quantile80_ood", 0))
    threshold = np.percentile(data.t, 80)
    assert data.t[te].min() > threshold >= data.t[np.concatenate([tr, va])].max()
    assert len(tr) == 600 and len(va) == 200


@pytest.mark.parametrize("mode", ["random_602020", "quantile80_ood"])
def test_split_is_seeded(mode):
    data = data_of(300, seed=2)
    a, b = split(data, SplitSpec(mode, 9)), split(data, SplitSpec(mode, 9))
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


def test_split_errors():
    with pytest.raises(SplitError):
        split(data_of(5), SplitSpec())
    flat = Dataset(np.zeros((20, 2)), np.zeros(20), np.zeros(20))
    with pytest.raises(SplitError):
        split(flat, SplitSpec("quantile80"))
    with pytest.raises(ConfigError):
        SplitSpec("kfold")


def test_aggregate_single_repeat_and_recompute():
    rows = [
        {"scenario": "A", "method": "msm", "repeat": 0, **{k: float(i) for i, k in enumerate(METRIC_KEYS)}},
        {"scenario": "A", "method": "msm", "repeat": 1, **{k: float(2 * i) for i, k in enumerate(METRIC_KEYS)}},
        {"scenario": "B", "method": "msm", "repeat": 0, **{k: 1.5 for k in METRIC_KEYS}},
        {"scenario": "B", "method": "msm", "repeat": 1, "error": "numeric: boom", **{k: None for k in METRIC_KEYS}},
    ]
    cells = {(c["scenario"], c["method"]): c for c in aggregate(rows)}
    b = cells[("B", "msm")]
    assert b["pcc_before"]["mean"] == 1.5 and b["pcc_before"]["count"] == 1 and b["failures"] == 1
    a = cells[("A", "msm")]
    vals = np.array([r["eps_mtef_train"] for r in rows[:2]])
    assert abs(a["eps_mtef_train"]["mean"] - vals.mean()) < 1e-12
    assert abs(a["eps_mtef_train"]["se"] - vals.std(ddof=1) / np.sqrt(2)) < 1e-12


def test_evaluate_baselines_rows():
    data, gt = make_scenario(ScenarioSpec("A", n=1000, seed=0))
    parts = [data.subset(i) for i in split(data, SplitSpec("random", 0))]
    msm = evaluate_method("msm", *parts, gt, FAST)
    assert msm["eps_mtef_train"] == pytest.approx(abs(msm["alpha1"] - 5))
    assert msm["pcc_after"] == msm["pcc_before"]
    icpw = evaluate_method("icpw", *parts, gt, FAST)
    assert icpw["pcc_after"] < icpw["pcc_before"]
    with pytest.raises(ConfigError):
        evaluate_method("lasso", *parts, gt, FAST)


def test_benchmark_one_repeat_full_matrix():
    report = run_benchmark(repeats=1, n=200, config=FAST, timestamp="t0")
    assert len(report["rows"]) == 16
    assert len(report["aggregates"]) == 16
    assert not [r for r in report["rows"] if r.get("error")]
    for cell in report["aggregates"]:
        row = next(r for r in report["rows"] if (r["scenario"], r["method"]) == (cell["scenario"], cell["method"]))
        for k in METRIC_KEYS:
            if row[k] is not None:
                assert cell[k]["mean"] == row[k]
    assert len(report["provenance"]) == 4


def test_benchmark_reports_are_byte_identical():
    kw = dict(scenarios=["B"], methods=["drl", "icpw"], repeats=2, n=150, config=FAST, timestamp="fixed")
    assert report_to_text(run_benchmark(**kw)) == report_to_text(run_benchmark(**kw))


def test_benchmark_records_cell_failures():
    report = run_benchmark(scenarios=["A"], methods=["icpw", "msm"], repeats=1, n=20, config=FAST, timestamp="t")
    assert [r["method"] for r in report["rows"]] == ["icpw", "msm"]
    assert all(r["error"].startswith("domain:") for r in report["rows"])
    assert all(r["pcc_after"] is None for r in report["rows"])
    assert all(c["failures"] == 1 for c in report["aggregates"])


def test_benchmark_rejects_bad_requests():
    with pytest.raises(ConfigError):
        run_benchmark(repeats=0)
    with pytest.raises(ConfigError):
        run_benchmark(methods=["gbm"])


def test_expand_space_order():
    combos = expand_space({"w_c": [10.0, 0.1], "rep_dim": [4]})
    assert combos == [{"rep_dim": 4, "w_c": 0.1}, {"rep_dim": 4, "w_c": 10.0}]
    assert expand_space({}) == [{}]
    with pytest.raises(ConfigError):
        expand_space({"w_c": []})


def test_grid_search_singleton_and_membership():
    data = data_of(300, seed=3, d=4)
    best, results = grid_search({"w_c": [0.5]}, data, base=FAST)
    assert best.w_c == 0.5 and len(results) == 1
    best, results = grid_search({"w_c": [0.1, 1.0, 10.0]}, data, base=FAST)
    assert best.w_c in (0.1, 1.0, 10.0) and len(results) == 3


@pytest.mark.slow
@pytest.mark.parametrize("key", ["lr_f", "lr_g"])
def test_grid_search_rejects_bad_learning_rate(key):
    # full default schedule: after only a few epochs a wild G can still look better on validation
    data = data_of(1000, seed=4)
    best, _ = grid_search({key: [1.0, 1e-3]}, data, base=DrlConfig(seed=0))
    assert getattr(best, key) == 1e-3


def test_grid_search_all_failures():
    data = data_of(100, seed=5, d=3)
    data.y[:] = np.nan
    with pytest.raises(SearchError):
        grid_search({"w_c": [1.0]}, data, base=FAST)
    with pytest.raises(ConfigError):
        grid_search({"w_c": [1.0]}, data, selection_metric="pcc", base=FAST)
