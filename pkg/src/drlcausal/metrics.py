"""Dependence and accuracy metrics.

* ``pcc``  - mean absolute Pearson correlation between each column and t.
* ``mcc``  - correlation between t and its prediction from a set of columns,
  using either least squares (``line``) or a CART regression tree (``nonL``).
* ``mtef_pred`` / ``eps_mtef`` - finite-difference marginal treatment effect
  curves and the RMSE between two of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, DomainError, NumericError

MCC_FIT_FRACTION = 0.7
MCC_SPLIT_SEED = 20240917
TREE_MAX_DEPTH = 6
TREE_MIN_LEAF = 10


def _weights(n: int, weights) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != n or (w < 0).any() or w.sum() <= 0:
        raise DomainError("weights must be non-negative, non-zero and match the row count")
    return w / w.sum()


def weighted_pearson(a: np.ndarray, b: np.ndarray, weights=None) -> float:
    """Pearson correlation under normalised sample weights; 0.0 if either side is constant."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 1)
    return float(column_correlations(a, b, weights).values[0])


@dataclass
class ColumnCorrelations:
    values: np.ndarray
    constant: np.ndarray  # True where the column (or t) had zero variance


def column_correlations(m: np.ndarray, t: np.ndarray, weights=None) -> ColumnCorrelations:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if len(m) != len(t):
        raise DomainError(f"{len(m)} rows against {len(t)} treatments")
    if len(t) < 2:
        raise DomainError("correlation needs at least two rows")
    w = _weights(len(t), weights)
    dt = t - w @ t
    vt = w @ (dt * dt)
    dm = m - w @ m
    vm = w @ (dm * dm)
    const = (vm <= 1e-24 * np.maximum(np.abs(m).max(axis=0), 1.0) ** 2) | (vt <= 1e-24 * max(np.abs(t).max(), 1.0) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (w @ (dm * dt[:, None])) / np.sqrt(vm * vt)
    r = np.where(const, 0.0, np.clip(r, -1.0, 1.0))
    return ColumnCorrelations(r, const)


def pcc(m: np.ndarray, t: np.ndarray, weights=None) -> float:
    """Average absolute Pearson correlation between the columns of ``m`` and ``t``."""
    return float(np.mean(np.abs(column_correlations(m, t, weights).values)))


def fit_ols(x: np.ndarray, t: np.ndarray, ridge: float = 1e-8, weights=None) -> np.ndarray:
    """Coefficients ``[intercept, slopes...]`` of (weighted) ridge least squares via the normal equations."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    n, k = x.shape
    if n <= k:
        raise DomainError(f"least squares needs more rows ({n}) than columns ({k})")
    design = np.column_stack([np.ones(n), x])
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    gram = design.T @ (design * w[:, None]) + ridge * np.eye(k + 1)
    rhs = design.T @ (w * t)
    try:
        beta = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular normal equations: {exc}") from exc
    if not np.isfinite(beta).all():
        raise NumericError("least-squares solution is not finite")
    return beta


def predict_ols(beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return beta[0] + x @ beta[1:]


@dataclass
class RegressionTree:
    """Array-encoded binary tree; ``feature[i] == -1`` marks a leaf."""

    max_depth: int
    min_leaf: int
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    n_rows: list[int] = field(default_factory=list)

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        node = np.zeros(len(x), dtype=int)
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left, right = np.asarray(self.left), np.asarray(self.right)
        active = feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = x[rows, feature[cur]] <= threshold[cur]
            node[rows] = np.where(go_left, left[cur], right[cur])
            active = feature[node] >= 0
        return np.asarray(self.value)[node]


def _best_split(x: np.ndarray, t: np.ndarray, min_leaf: int):
    n = len(t)
    base = ((t - t.mean()) ** 2).sum()
    best = (0.0, -1, 0.0)
    for j in range(x.shape[1]):
        order = np.argsort(x[:, j], kind="stable")
        xs, ts = x[order, j], t[order]
        csum = np.cumsum(ts)
        csq = np.cumsum(ts * ts)
        # candidate i puts rows [0, i) left
        i = np.arange(min_leaf, n - min_leaf + 1)
        if i.size == 0:
            continue
        valid = xs[i - 1] < xs[np.minimum(i, n - 1)]
        i = i[valid]
        if i.size == 0:
            continue
        ls, lq = csum[i - 1], csq[i - 1]
        rs, rq = csum[-1] - ls, csq[-1] - lq
        sse = (lq - ls * ls / i) + (rq - rs * rs / (n - i))
        k = int(np.argmin(sse))
        gain = base - sse[k]
        if gain > best[0] + 1e-12 * max(base, 1.0):
            cut = i[k]
            best = (gain, j, 0.5 * (xs[cut - 1] + xs[cut]))
    return best


def fit_tree(x: np.ndarray, t: np.ndarray, max_depth: int = TREE_MAX_DEPTH, min_leaf: int = TREE_MIN_LEAF) -> RegressionTree:
    """Greedy CART regression tree minimising the summed squared error of the child means."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if len(t) < 2 * min_leaf:
        raise DomainError(f"tree needs at least {2 * min_leaf} rows, got {len(t)}")
    tree = RegressionTree(max_depth=max_depth, min_leaf=min_leaf)

    def grow(rows: np.ndarray, depth: int) -> int:
        node = len(tree.feature)
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.value.append(float(t[rows].mean()))
        tree.n_rows.append(len(rows))
        if depth >= max_depth or len(rows) < 2 * min_leaf:
            return node
        gain, j, thr = _best_split(x[rows], t[rows], min_leaf)
        if j < 0 or gain <= 0:
            return node
        mask = x[rows, j] <= thr
        tree.feature[node] = j
        tree.threshold[node] = float(thr)
        tree.left[node] = grow(rows[mask], depth + 1)
        tree.right[node] = grow(rows[~mask], depth + 1)
        return node

    grow(np.arange(len(t)), 0)
    return tree


def mcc(
    x: np.ndarray,
    t: np.ndarray,
    mode: str = "line",
    holdout: bool = True,
    weights=None,
    seed: int = MCC_SPLIT_SEED,
    max_depth: int = TREE_MAX_DEPTH,
    min_leaf: int = TREE_MIN_LEAF,
) -> float:
    """Correlation between ``t`` and its prediction from ``x``.

    With ``holdout`` the sub-model is fit on a fixed 70% of rows and the
    correlation is measured on the remaining 30%. Returns the raw correlation,
    so useless models can score slightly below zero. ``weights`` turn both the
    fit and the correlation into their weighted versions (OLS only; the tree
    is fit unweighted on a weight-proportional resample).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    n = len(t)
    if n < 10:
        raise DomainError(f"mcc needs at least 10 rows, got {n}")
    if len(x) != n:
        raise DomainError(f"{len(x)} rows against {n} treatments")
    if mode not in ("line", "nonL"):
        raise DomainError(f"unknown mcc mode {mode!r}")
    w = None if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if holdout:
        perm = np.random.default_rng(seed).permutation(n)
        cut = int(round(MCC_FIT_FRACTION * n))
        fit_idx, eval_idx = perm[:cut], perm[cut:]
    else:
        fit_idx = eval_idx = np.arange(n)
    if mode == "line":
        beta = fit_ols(x[fit_idx], t[fit_idx], weights=None if w is None else w[fit_idx])
        t_hat = predict_ols(beta, x[eval_idx])
    else:
        rows = fit_idx
        if w is not None:
            p = w[fit_idx] / w[fit_idx].sum()
            rows = np.random.default_rng(seed + 1).choice(fit_idx, size=len(fit_idx), replace=True, p=p)
        tree = fit_tree(x[rows], t[rows], max_depth=max_depth, min_leaf=min_leaf)
        t_hat = tree.predict(x[eval_idx])
    return weighted_pearson(t[eval_idx], t_hat, None if w is None else w[eval_idx])


@dataclass
class MtefCurve:
    t_levels: np.ndarray
    dt: float
    values: np.ndarray

    def __post_init__(self):
        self.t_levels = np.asarray(self.t_levels, dtype=np.float64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.dt <= 0:
            raise ContractError("dt must be positive")
        if self.t_levels.size != self.values.size:
            raise ContractError("one MTEF value per treatment level is required")
        if self.t_levels.size > 1 and not (np.diff(self.t_levels) > 0).all():
            raise ContractError("treatment levels must be strictly ascending")


def mtef_grid(t: np.ndarray, n_levels: int = 20, lo_pct: float = 10.0, hi_pct: float = 90.0) -> tuple[np.ndarray, float]:
    """Evenly spaced levels between two percentiles of ``t``; ``dt`` is 1/40 of the full range."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    lo, hi = np.percentile(t, [lo_pct, hi_pct])
    dt = float((t.max() - t.min()) / 40.0)
    if dt <= 0 or hi <= lo:
        raise DomainError("treatment has no spread; cannot build an MTEF grid")
    return np.linspace(lo, hi, n_levels), dt


def mtef_pred(predict: Callable[[np.ndarray, np.ndarray], np.ndarray], x: np.ndarray, t_levels, dt: float) -> MtefCurve:
    """Marginal effect of a predictor averaged over the rows of ``x``.

    ``predict(x, t)`` returns one outcome per row for the treatment vector ``t``.
    """
    if dt <= 0:
        raise ContractError("dt must be positive")
    t_levels = np.asarray(t_levels, dtype=np.float64).reshape(-1)
    n = len(x)
    values = np.empty(t_levels.size)
    for j, level in enumerate(t_levels):
        hi = np.mean(predict(x, np.full(n, level)))
        lo = np.mean(predict(x, np.full(n, level - dt)))
        values[j] = (hi - lo) / dt
    return MtefCurve(t_levels, dt, values)


def eps_mtef(true_curve: MtefCurve, pred_curve: MtefCurve) -> float:
    """Root mean squared difference between two curves on the same grid."""
    if true_curve.dt != pred_curve.dt or not np.array_equal(true_curve.t_levels, pred_curve.t_levels):
        raise ContractError("MTEF curves are on different grids")
    diff = true_curve.values - pred_curve.values
    return float(np.sqrt(np.mean(diff * diff)))
