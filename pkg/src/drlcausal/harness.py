"""Dataset splits, benchmark loops and hyper-parameter grid search."""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .baselines import icpw_weights, msm_fit, msm_mtef, naive_net
from .drl import DrlConfig, DrlModel, discriminator_outputs, predict, representations, train
from .errors import ConfigError, DrlError, SearchError, SplitError, TrainingError
from .io import REPORT_FORMAT, REPORT_VERSION
from .metrics import MtefCurve, eps_mtef, mcc, mtef_grid, mtef_pred, pcc
from .synthgen import Dataset, GroundTruth, ScenarioSpec, make_scenario, true_mtef

logger = logging.getLogger(__name__)

SPLIT_MODES = ("random_602020", "quantile80_ood")
SPLIT_ALIASES = {"random": "random_602020", "quantile80": "quantile80_ood"}
METHODS = ("drl", "msm", "icpw", "naive")
METRIC_KEYS = (
    "pcc_before", "pcc_after",
    "mcc_line_before", "mcc_line_after",
    "mcc_nonl_before", "mcc_nonl_after",
    "eps_mtef_train", "eps_mtef_test",
    "d_real", "d_fake",
)
# used when grid_search gets no space; a documented starting point, not a tuned result
DEFAULT_SEARCH_SPACE = {"w_c": [0.1, 1.0, 10.0], "rep_dim": [2, 4, 10], "lr_g": [1e-3, 3e-3]}


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "random_602020"
    seed: int = 0

    def __post_init__(self):
        mode = SPLIT_ALIASES.get(self.mode, self.mode)
        if mode not in SPLIT_MODES:
            raise ConfigError(f"unknown split mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)


def split(dataset: Dataset, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Train/validation/test row indices.

    ``random_602020`` shuffles and cuts 60/20/20. ``quantile80_ood`` puts every
    row with t above the 80th percentile in the test set and splits the rest
    75/25, which keeps the overall 60/20 train/validation proportion.
    """
    n = dataset.n
    if n < 10:
        raise SplitError(f"need at least 10 rows to split, got {n}")
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "random_602020":
        perm = rng.permutation(n)
        n_tr, n_va = int(round(0.6 * n)), int(round(0.2 * n))
        parts = perm[:n_tr], perm[n_tr:n_tr + n_va], perm[n_tr + n_va:]
    else:
        threshold = np.percentile(dataset.t, 80)
        test = np.flatnonzero(dataset.t > threshold)
        rest = rng.permutation(np.flatnonzero(dataset.t <= threshold))
        n_tr = int(round(0.75 * len(rest)))
        parts = rest[:n_tr], rest[n_tr:], test
    for name, idx in zip(("train", "validation", "test"), parts):
        if len(idx) == 0:
            raise SplitError(f"{name} part of the split is empty")
    return tuple(np.sort(p) for p in parts)


def _oracle_curve(gt: GroundTruth, t: np.ndarray) -> MtefCurve:
    levels, dt = mtef_grid(t)
    return MtefCurve(levels, dt, true_mtef(gt, levels, dt))


def _dependence(before_x, after_x, t, weights=None) -> dict:
    return {
        "pcc_before": pcc(before_x, t),
        "pcc_after": pcc(after_x, t, weights),
        "mcc_line_before": mcc(before_x, t, "line"),
        "mcc_line_after": mcc(after_x, t, "line", weights=weights),
        "mcc_nonl_before": mcc(before_x, t, "nonL"),
        "mcc_nonl_after": mcc(after_x, t, "nonL", weights=weights),
    }


def evaluate_method(
    method: str,
    train_set: Dataset,
    val_set: Dataset,
    test_set: Dataset,
    gt: GroundTruth,
    config: DrlConfig,
) -> dict:
    """Fit one method on ``train_set`` and score dependence and MTEF accuracy."""
    train_curve = _oracle_curve(gt, train_set.t)
    test_curve = _oracle_curve(gt, test_set.t)
    row: dict = {k: None for k in METRIC_KEYS}
    if method in ("msm", "icpw"):
        weights = icpw_weights(train_set.x, train_set.t).weights if method == "icpw" else None
        fit = msm_fit(train_set.t, train_set.y, weights)
        row.update(_dependence(train_set.x, train_set.x, train_set.t, weights))
        row["eps_mtef_train"] = eps_mtef(train_curve, msm_mtef(fit, train_curve.t_levels, train_curve.dt))
        row["eps_mtef_test"] = eps_mtef(test_curve, msm_mtef(fit, test_curve.t_levels, test_curve.dt))
        row["alpha0"], row["alpha1"] = fit.alpha0, fit.alpha1
    elif method == "naive":
        net = naive_net(train_set, config, val=val_set)
        row.update(_dependence(train_set.x, train_set.x, train_set.t))
        row["eps_mtef_train"] = eps_mtef(train_curve, mtef_pred(net.predict, train_set.x, train_curve.t_levels, train_curve.dt))
        row["eps_mtef_test"] = eps_mtef(test_curve, mtef_pred(net.predict, test_set.x, test_curve.t_levels, test_curve.dt))
    elif method == "drl":
        model, history = train(train_set, config, val=val_set)
        row.update(_dependence(train_set.x, representations(model, train_set.x), train_set.t))
        row.update(score_model(model, train_set, test_set, gt))
        row["best_epoch"] = history.best_epoch
    else:
        raise ConfigError(f"unknown method {method!r}")
    return row


def score_model(model: DrlModel, train_set: Dataset, test_set: Dataset, gt: GroundTruth | None, seed: int = 0) -> dict:
    """MTEF errors (when ground truth is known) and mean discriminator outputs."""

    def fn(x, t):
        return predict(model, x, t)

    out = {}
    if gt is not None:
        for name, part in (("train", train_set), ("test", test_set)):
            curve = _oracle_curve(gt, part.t)
            out[f"eps_mtef_{name}"] = eps_mtef(curve, mtef_pred(fn, part.x, curve.t_levels, curve.dt))
    out["d_real"], out["d_fake"] = discriminator_outputs(model, train_set.x, train_set.t, np.random.default_rng(seed))
    return out


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean, standard error and median of each metric per (scenario, method)."""
    cells: dict[tuple[str, str], list[dict]] = {}
    for r in rows:
        cells.setdefault((r["scenario"], r["method"]), []).append(r)
    out = []
    for (scenario, method), members in cells.items():
        entry = {"scenario": scenario, "method": method, "repeats": len(members), "failures": sum(1 for m in members if m.get("error"))}
        for key in METRIC_KEYS:
            vals = np.array([m[key] for m in members if m.get(key) is not None], dtype=float)
            if vals.size == 0:
                entry[key] = None
                continue
            se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
            entry[key] = {"mean": float(vals.mean()), "se": se, "median": float(np.median(vals)), "count": int(vals.size)}
        out.append(entry)
    return out


def run_benchmark(
    scenarios=("A", "B", "C", "D"),
    methods=METHODS,
    repeats: int = 10,
    base_seed: int = 0,
    n: int = 4000,
    d: int = 10,
    split_mode: str = "random_602020",
    config: DrlConfig | None = None,
    timestamp: str | None = None,
) -> dict:
    """Fresh scenario draws per repeat, every method fit on the same split.

    A failing cell is recorded with an ``error`` field and does not stop the run.
    """
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    config = DrlConfig() if config is None else config
    rows, provenance = [], []
    for scenario in scenarios:
        for r in range(repeats):
            seed = base_seed + r
            spec = ScenarioSpec(scenario, n=n, seed=seed, d=d)
            data, gt = make_scenario(spec)
            tr, va, te = split(data, SplitSpec(split_mode, seed))
            parts = data.subset(tr), data.subset(va), data.subset(te)
            provenance.append({"scenario": scenario, "repeat": r, "seed": seed, "ground_truth": gt.to_dict()})
            for method in methods:
                row = {"scenario": scenario, "method": method, "repeat": r, "seed": seed}
                try:
                    row.update(evaluate_method(method, *parts, gt, replace(config, seed=seed)))
                except (DrlError, np.linalg.LinAlgError) as exc:
                    category = getattr(exc, "category", "numeric")
                    row.update({k: None for k in METRIC_KEYS})
                    row["error"] = f"{category}: {exc}"
                logger.info("%s/%s repeat %d done", scenario, method, r)
                rows.append(row)
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "metadata": {"created": timestamp or datetime.now(timezone.utc).isoformat(), "package_version": __version__},
        "request": {
            "scenarios": list(scenarios), "methods": list(methods), "repeats": repeats,
            "base_seed": base_seed, "n": n, "d": d, "split": SplitSpec(split_mode).mode,
            "config": config.to_dict(),
        },
        "provenance": provenance,
        "rows": rows,
        "aggregates": aggregate(rows),
    }


def expand_space(space: dict) -> list[dict]:
    """Cartesian product of a ``{key: [values...]}`` space, in lexical order of the overrides."""
    if not space:
        return [{}]
    keys = sorted(space)
    for k in keys:
        if not isinstance(space[k], (list, tuple)) or len(space[k]) == 0:
            raise ConfigError(f"search space entry {k!r} must be a non-empty list")
    combos = [dict(zip(keys, values)) for values in itertools.product(*(space[k] for k in keys))]
    return sorted(combos, key=lambda c: json.dumps(c, sort_keys=True))


def grid_search(
    config_space: dict | None,
    dataset: Dataset,
    selection_metric: str = "val_l_c",
    base: DrlConfig | None = None,
    split_seed: int = 0,
) -> tuple[DrlConfig, list[dict]]:
    """Train every configuration and return the one with the lowest validation outcome loss.

    ``val_l_c`` is the mean squared error (or cross-entropy) of the outcome
    predictions on the validation part, in raw units. Ties keep the earlier
    configuration.
    """
    if selection_metric != "val_l_c":
        raise ConfigError(f"unsupported selection metric {selection_metric!r}")
    base = DrlConfig() if base is None else base
    combos = expand_space(DEFAULT_SEARCH_SPACE if config_space is None else config_space)
    tr, va, _ = split(dataset, SplitSpec("random_602020", split_seed))
    train_set, val_set = dataset.subset(tr), dataset.subset(va)
    results = []
    best: tuple[float, DrlConfig | None] = (math.inf, None)
    for overrides in combos:
        try:
            cfg = DrlConfig.from_dict({**base.to_dict(), **overrides})
            model, _ = train(train_set, cfg, val=val_set)
            pred = predict(model, val_set.x, val_set.t)
            if val_set.outcome_kind == "binary":
                p = np.clip(pred, 1e-7, 1 - 1e-7)
                score = float(-np.mean(val_set.y * np.log(p) + (1 - val_set.y) * np.log(1 - p)))
            else:
                score = float(np.mean((pred - val_set.y) ** 2))
            if not np.isfinite(score):
                raise TrainingError("validation loss is not finite")
        except DrlError as exc:
            results.append({"overrides": overrides, "score": None, "error": f"{exc.category}: {exc}"})
            continue
        results.append({"overrides": overrides, "score": score})
        if score < best[0]:
            best = (score, cfg)
    if best[1] is None:
        raise SearchError("every configuration failed: " + "; ".join(r["error"] for r in results))
    return best[1], results
