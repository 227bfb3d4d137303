"""Reweighting baselines and the no-adversary ablation network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .drl import DrlConfig, Scaler
from .errors import DomainError, NumericError, TrainingError
from .metrics import MtefCurve, fit_ols, predict_ols
from .nn import Adam, Mlp, MlpConfig, bce_loss, mlp_new, mse_loss
from .synthgen import Dataset

CLIP_PERCENTILE = 99.0


def _normal_logpdf(v: np.ndarray, mean, var: float) -> np.ndarray:
    return -0.5 * np.log(2.0 * np.pi * var) - 0.5 * (v - mean) ** 2 / var


@dataclass
class IcpwWeights:
    weights: np.ndarray
    marginal_mean: float
    marginal_var: float
    conditional_coef: np.ndarray
    conditional_var: float


def icpw_weights(x: np.ndarray, t: np.ndarray, clip_percentile: float | None = CLIP_PERCENTILE) -> IcpwWeights:
    """Stabilised inverse conditional probability-of-treatment weights.

    Numerator: Gaussian fit to the marginal of ``t``. Denominator: Gaussian
    linear model for ``t | x``. Weights are clipped at ``clip_percentile``
    and rescaled to mean one.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    n, d = x.shape
    if n <= d + 2:
        raise DomainError(f"ICPW needs more than d + 2 = {d + 2} rows, got {n}")
    beta = fit_ols(x, t)
    resid = t - predict_ols(beta, x)
    cond_var = float(resid @ resid / (n - d - 1))
    marg_mean = float(t.mean())
    marg_var = float(t.var(ddof=1))
    if cond_var <= 1e-12 * max(marg_var, 1e-300) or marg_var <= 0:
        raise NumericError("treatment is (almost) a deterministic function of the covariates; ICPW is degenerate")
    log_w = _normal_logpdf(t, marg_mean, marg_var) - _normal_logpdf(t, predict_ols(beta, x), cond_var)
    # clipping and renormalisation are scale-free, so shift for overflow safety
    w = np.exp(log_w - log_w.max())
    if clip_percentile is not None:
        w = np.minimum(w, np.percentile(w, clip_percentile))
    w = w / w.mean()
    if not np.isfinite(w).all() or (w <= 0).any():
        raise NumericError("ICPW weights are not positive and finite")
    return IcpwWeights(w, marg_mean, marg_var, beta, cond_var)


@dataclass
class MsmFit:
    alpha0: float
    alpha1: float


def msm_fit(t: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None) -> MsmFit:
    """Weighted least squares of ``y`` on ``(1, t)``."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(t) < 2 or len(t) != len(y):
        raise DomainError("MSM needs at least two rows and matching t, y")
    w = np.ones(len(t)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if (w <= 0).any():
        raise DomainError("MSM weights must be positive")
    w = w / w.sum()
    tm = w @ t
    var_t = w @ (t - tm) ** 2
    if var_t <= 1e-14 * max(tm * tm, 1.0):
        raise NumericError("treatment is constant; MSM slope is not identified")
    ym = w @ y
    a1 = float(w @ ((t - tm) * (y - ym)) / var_t)
    return MsmFit(float(ym - a1 * tm), a1)


def msm_mtef(fit: MsmFit, t_levels, dt: float) -> MtefCurve:
    t_levels = np.asarray(t_levels, dtype=np.float64).reshape(-1)
    return MtefCurve(t_levels, dt, np.full(t_levels.size, fit.alpha1))


@dataclass
class NaiveNet:
    """Outcome network on the raw ``[x, t]`` with no de-confounding."""

    f: Mlp
    scaler: Scaler
    outcome_kind: str = "continuous"
    losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)

    def _forward(self, x_scaled: np.ndarray, t_scaled: np.ndarray) -> Node:
        inp = np.column_stack([x_scaled, t_scaled])
        return self.f(Node(inp, op="const"))

    def predict(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        out = self._forward(self.scaler.x(np.asarray(x, dtype=np.float64)), self.scaler.t(t)).value.reshape(-1)
        return self.scaler.y_inverse(out)

    def loss(self, data: Dataset) -> float:
        sc = self.scaler
        return float(self._loss_node(sc.x(data.x), sc.t(data.t), sc.y(data.y)).value)

    def _loss_node(self, xs, ts, ys) -> Node:
        pred = self._forward(xs, ts)
        return bce_loss(pred, ys) if self.outcome_kind == "binary" else mse_loss(pred, ys)


def naive_net(dataset: Dataset, config: DrlConfig, val: Dataset | None = None) -> NaiveNet:
    """Train the ablation network with the same F architecture, optimizer and schedule as DRL."""
    rng = np.random.default_rng(config.seed)
    out_act = "sigmoid" if dataset.outcome_kind == "binary" else "identity"
    mlp_cfg = MlpConfig((dataset.d + 1, *config.f_hidden, 1), config.f_activation, out_act)
    scaler = Scaler.fit(dataset) if config.standardize else Scaler.identity(dataset.d)
    model = NaiveNet(mlp_new(mlp_cfg, rng, name="naive"), scaler, dataset.outcome_kind)
    opt = Adam(model.f.params, lr=config.lr_f)
    data = scaler.transform(dataset)
    n = data.n
    bs = min(config.batch_size, n)
    best = (np.inf, None)
    first_eligible = int(np.floor(config.best_after * config.epochs))
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            loss = model._loss_node(data.x[idx], data.t[idx], data.y[idx])
            if not np.isfinite(loss.value):
                raise TrainingError(f"naive network diverged at epoch {epoch}")
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            total += float(loss.value) * len(idx)
        model.losses.append(total / n)
        if val is not None:
            vl = model.loss(val)
            model.val_losses.append(vl)
            if config.keep_best and epoch >= first_eligible and vl < best[0]:
                best = (vl, model.f.snapshot())
    if best[1] is not None:
        model.f.restore(best[1])
    return model
