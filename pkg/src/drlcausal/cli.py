"""Command line interface: ``drlcausal {generate,train,eval,bench,gridsearch,mtef}``.

Failures exit with status 1 and print one line ``error: <category>: <message>``
to stderr; usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .drl import DrlConfig, predict, representations, train
from .errors import ConfigError, DrlError, FormatError
from .harness import METHODS, SplitSpec, grid_search, run_benchmark, score_model, split
from .io import (
    REPORT_FORMAT,
    REPORT_VERSION,
    atomic_write,
    ground_truth_from_meta,
    load_checkpoint,
    read_dataset,
    read_truth,
    save_checkpoint,
    write_dataset,
    write_report,
)
from .metrics import mcc, mtef_grid, mtef_pred, pcc
from .synthgen import SCENARIOS, ScenarioSpec, make_scenario, true_mtef

logger = logging.getLogger("drlcausal")


def _load_config(path: str | None) -> DrlConfig:
    if path is None:
        return DrlConfig()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed config ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    return DrlConfig.from_dict(doc)


def _csv_list(text: str, allowed, what: str) -> list[str]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in items if s not in allowed]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"invalid {what}: {','.join(bad) or text!r}; choose from {','.join(allowed)}")
    return items


def cmd_generate(args) -> None:
    data, gt = make_scenario(ScenarioSpec(args.scenario, n=args.n, seed=args.seed, d=args.d))
    truth = {
        "scenario": args.scenario, "n": args.n, "d": args.d, "seed": args.seed,
        "outcome_kind": data.outcome_kind, "ground_truth": gt.to_dict(),
    }
    write_dataset(args.out, data, truth)


def cmd_train(args) -> None:
    data = read_dataset(args.data)
    cfg = _load_config(args.config).to_dict()
    for key, value in (("seed", args.seed), ("epochs", args.epochs), ("w_c", args.wc), ("rep_dim", args.rep_dim)):
        if value is not None:
            cfg[key] = value
    config = DrlConfig.from_dict(cfg)
    val = None
    if args.split:
        tr, va, _ = split(data, SplitSpec(args.split, config.seed))
        data, val = data.subset(tr), data.subset(va)
    model, history = train(data, config, val=val)
    save_checkpoint(args.out, model)
    if history.records:
        last = history.records[-1]
        logger.info("trained %d epochs; final l_d=%.4f l_g=%.4f l_c=%.4f", len(history.records), last.l_d, last.l_g, last.l_c)


def cmd_eval(args) -> None:
    model = load_checkpoint(args.ckpt)
    data = read_dataset(args.data)
    gt = ground_truth_from_meta(read_truth(args.data))
    seed = model.config.seed if args.seed is None else args.seed
    if args.split:
        tr, _, te = split(data, SplitSpec(args.split, seed))
        parts = {"train": data.subset(tr), "test": data.subset(te)}
    else:
        parts = {"train": data, "test": data}
    train_set = parts["train"]
    rep = representations(model, train_set.x)
    metrics = {
        "pcc_before": pcc(train_set.x, train_set.t),
        "pcc_after": pcc(rep, train_set.t),
        "mcc_line_before": mcc(train_set.x, train_set.t, "line"),
        "mcc_line_after": mcc(rep, train_set.t, "line"),
        "mcc_nonl_before": mcc(train_set.x, train_set.t, "nonL"),
        "mcc_nonl_after": mcc(rep, train_set.t, "nonL"),
    }
    metrics.update(score_model(model, parts["train"], parts["test"], gt))
    doc = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "kind": "eval",
        "metadata": {"package_version": __version__},
        "request": {"ckpt": str(args.ckpt), "data": str(args.data), "split": args.split, "seed": seed},
        "metrics": metrics,
    }
    write_report(args.report, doc)


def cmd_bench(args) -> None:
    config = _load_config(args.config)
    if args.epochs is not None:
        config = DrlConfig.from_dict({**config.to_dict(), "epochs": args.epochs})
    report = run_benchmark(
        scenarios=args.scenarios, methods=args.methods, repeats=args.repeats, base_seed=args.seed,
        n=args.n, d=args.d, split_mode=args.split, config=config,
    )
    write_report(args.out, report)


def cmd_gridsearch(args) -> None:
    data = read_dataset(args.data)
    try:
        space = json.loads(Path(args.space).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{args.space}: malformed search space ({exc.msg})") from exc
    if not isinstance(space, dict):
        raise FormatError(f"{args.space}: search space must be a JSON object of lists")
    base = _load_config(args.config)
    best, results = grid_search(space, data, base=base, split_seed=args.seed)
    doc = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "kind": "gridsearch",
        "metadata": {"package_version": __version__},
        "space": space,
        "results": results,
        "best_config": best.to_dict(),
    }
    write_report(args.out, doc)


def cmd_mtef(args) -> None:
    model = load_checkpoint(args.ckpt)
    data = read_dataset(args.data)
    gt = ground_truth_from_meta(read_truth(args.data))
    levels, dt = mtef_grid(data.t, n_levels=args.levels)
    curve = mtef_pred(lambda x, t: predict(model, x, t), data.x, levels, dt)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["t_level", "dt", "mtef_pred"] + (["mtef_true"] if gt is not None else [])
    w.writerow(header)
    truth = true_mtef(gt, levels, dt) if gt is not None else None
    for j, level in enumerate(levels):
        row = [format(level, ".17g"), format(dt, ".17g"), format(curve.values[j], ".17g")]
        if truth is not None:
            row.append(format(float(truth[j]), ".17g"))
        w.writerow(row)
    atomic_write(args.out, buf.getvalue())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drlcausal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic scenario as CSV plus ground-truth sidecar")
    g.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--d", type=int, default=10)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a DRL model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--wc", type=float)
    t.add_argument("--rep-dim", type=int, dest="rep_dim")
    t.add_argument("--split", choices=["random", "quantile80"],
                   help="train on the split's training part and select the checkpoint on its validation part")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--split", choices=["random", "quantile80"])
    e.add_argument("--seed", type=int, help="split seed (defaults to the checkpoint's training seed)")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="run the scenario x method benchmark")
    b.add_argument("--scenarios", type=lambda s: _csv_list(s, sorted(SCENARIOS), "scenarios"), default=list("ABCD"))
    b.add_argument("--methods", type=lambda s: _csv_list(s, METHODS, "methods"), default=list(METHODS))
    b.add_argument("--repeats", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.add_argument("--n", type=int, default=4000)
    b.add_argument("--d", type=int, default=10)
    b.add_argument("--epochs", type=int)
    b.add_argument("--config")
    b.add_argument("--split", choices=["random", "quantile80"], default="random")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("gridsearch", help="pick the DRL configuration with the lowest validation loss")
    s.add_argument("--data", required=True)
    s.add_argument("--space", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="base configuration the space overrides")
    s.add_argument("--seed", type=int, default=0, help="split seed")
    s.set_defaults(func=cmd_gridsearch)

    m = sub.add_parser("mtef", help="write the predicted MTEF curve as CSV")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--levels", type=int, default=20)
    m.set_defaults(func=cmd_mtef)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DrlError as exc:
        print(f"error: {exc.category}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: io: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
