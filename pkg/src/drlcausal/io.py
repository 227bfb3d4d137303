"""File formats: dataset CSV (+ ground-truth sidecar), model checkpoints, reports.

All writers go through :func:`atomic_write`, which writes a temporary file in
the target directory and renames it over the target, so readers never see a
partially written file.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .drl import DrlConfig, DrlModel, Scaler
from .errors import DimensionError, FormatError
from .nn import Mlp, MlpConfig
from .synthgen import Dataset, GroundTruth

CHECKPOINT_FORMAT = "drlcausal-checkpoint"
CHECKPOINT_VERSION = 1
REPORT_FORMAT = "drlcausal-report"
REPORT_VERSION = 1
TRUTH_SUFFIX = ".truth.json"


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dataset_to_csv(data: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(data.d)] + ["t", "y"])
    for xi, ti, yi in zip(data.x, data.t, data.y):
        w.writerow([_fmt(v) for v in xi] + [_fmt(ti), _fmt(yi)])
    return buf.getvalue()


def write_dataset(path, data: Dataset, truth: dict | None = None) -> None:
    """Write the CSV; ``truth`` (if given) goes to the ``<path>.truth.json`` sidecar."""
    if truth is not None:
        atomic_write(str(path) + TRUTH_SUFFIX, json.dumps(truth, indent=1, sort_keys=True) + "\n")
    atomic_write(path, dataset_to_csv(data))


def read_dataset(path, outcome_kind: str | None = None) -> Dataset:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 text") from exc
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    d = len(header) - 2
    expected = [f"x{i}" for i in range(d)] + ["t", "y"]
    if d < 1 or header != expected:
        raise FormatError(f"{path}: header must be x0,...,x{{d-1}},t,y; got {','.join(header)}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise FormatError(f"{path}: no data rows")
    try:
        arr = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric value ({exc})") from exc
    if arr.ndim != 2 or arr.shape[1] != d + 2:
        raise FormatError(f"{path}: every row must have {d + 2} fields")
    if not np.isfinite(arr).all():
        raise FormatError(f"{path}: non-finite values")
    if outcome_kind is None:
        meta = read_truth(path)
        outcome_kind = meta.get("outcome_kind", "continuous") if meta else "continuous"
    return Dataset(arr[:, :d], arr[:, d], arr[:, d + 1], outcome_kind)


def read_truth(data_path) -> dict | None:
    """The sidecar metadata next to a dataset CSV, or None if there is none."""
    p = Path(str(data_path) + TRUTH_SUFFIX)
    if not p.exists():
        return None
    try:
        meta = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: malformed ground-truth document ({exc})") from exc
    return meta


def ground_truth_from_meta(meta: dict | None) -> GroundTruth | None:
    if not meta or "ground_truth" not in meta:
        return None
    return GroundTruth.from_dict(meta["ground_truth"])


def model_to_dict(model: DrlModel) -> dict:
    nets = {}
    for key, net in model.nets.items():
        nets[key] = {
            "config": net.config.to_dict(),
            "layers": [
                {"weight": w.value.tolist(), "bias": b.value.reshape(-1).tolist()}
                for w, b in zip(net.weights, net.biases)
            ],
        }
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": model.config.seed,
        "config": model.config.to_dict(),
        "scaler": model.scaler.to_dict(),
        "networks": nets,
    }


def model_from_dict(doc: dict) -> DrlModel:
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError("not a drlcausal checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        config = DrlConfig.from_dict(doc["config"])
        nets = {}
        for key in ("g", "c", "d", "f"):
            spec = doc["networks"][key]
            layers = spec["layers"]
            nets[key] = Mlp(
                MlpConfig.from_dict(spec["config"]),
                [np.asarray(layer["weight"], dtype=np.float64) for layer in layers],
                [np.asarray(layer["bias"], dtype=np.float64) for layer in layers],
                name=key,
            )
        scaler = Scaler.from_dict(doc["scaler"])
        model = DrlModel(nets["g"], nets["c"], nets["d"], nets["f"], config, scaler)
    except (KeyError, TypeError, ValueError, DimensionError) as exc:
        raise FormatError(f"checkpoint does not describe a consistent model: {exc}") from exc
    if scaler.x_mean.shape != (model.d_in,) or scaler.x_scale.shape != (model.d_in,):
        raise FormatError("checkpoint scaler does not match the generator input width")
    return model


def save_checkpoint(path, model: DrlModel) -> None:
    atomic_write(path, json.dumps(model_to_dict(model), sort_keys=True) + "\n")


def load_checkpoint(path) -> DrlModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: truncated or malformed checkpoint ({exc.msg})") from exc
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 text") from exc
    return model_from_dict(doc)


def _clean(obj):
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_to_text(doc: dict) -> str:
    return json.dumps(_clean(doc), indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_report(path, doc: dict) -> None:
    atomic_write(path, report_to_text(doc))


def read_report(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed report ({exc.msg})") from exc
    if doc.get("format") != REPORT_FORMAT:
        raise FormatError(f"{path}: not a drlcausal report")
    if doc.get("version") != REPORT_VERSION:
        raise FormatError(f"{path}: unsupported report version {doc.get('version')!r}")
    return doc
