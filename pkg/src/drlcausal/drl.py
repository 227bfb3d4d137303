"""De-confounding representation learning.

Four networks:

* ``g`` maps covariates to a representation ``X^G``;
* ``c`` maps ``[representation, t]`` to correlation features;
* ``d`` scores correlation features as coming from the virtual
  representation ``X^R ~ N(0, I)`` (real) or from ``X^G`` (fake);
* ``f`` predicts the outcome from ``[X^G, t]``.

Each minibatch runs a C/D ascent step, a G descent step and an F descent step,
each touching only its own networks' parameters.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, DimensionError, NumericError, TrainingError
from .nn import Adam, Mlp, MlpConfig, bce_loss, mlp_new, mse_loss
from .synthgen import Dataset

logger = logging.getLogger(__name__)

ADV_LOSSES = ("minimax", "nonsaturating")
PROB_EPS = 1e-12


@dataclass
class DrlConfig:
    # the clipped random covariance leaves X with only a few informative directions,
    # so a small code is easier to push towards N(0, I)
    rep_dim: int = 4
    w_c: float = 1.0
    epochs: int = 300
    batch_size: int = 256
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    lr_f: float = 1e-3
    steps_d: int = 2
    steps_g: int = 1
    steps_f: int = 1
    seed: int = 0
    outcome_kind: str = "continuous"
    adv_loss: str = "minimax"
    g_hidden: tuple[int, ...] = (64, 64)
    c_hidden: tuple[int, ...] = (64, 32)
    c_out: int = 8
    d_hidden: tuple[int, ...] = (32,)
    f_hidden: tuple[int, ...] = (64, 64)
    g_activation: str = "relu"
    c_activation: str = "tanh"
    d_activation: str = "tanh"
    f_activation: str = "relu"
    keep_best: bool = True
    best_after: float = 0.5
    standardize: bool = True

    def __post_init__(self):
        for name in ("g_hidden", "c_hidden", "d_hidden", "f_hidden"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.rep_dim < 1:
            raise ConfigError("rep_dim must be at least 1")
        if min(self.lr_g, self.lr_d, self.lr_f) <= 0:
            raise ConfigError("learning rates must be positive")
        if min(self.steps_d, self.steps_g, self.steps_f) < 1:
            raise ConfigError("step counts must be at least 1")
        if self.w_c < 0:
            raise ConfigError("w_c must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.outcome_kind not in ("continuous", "binary"):
            raise ConfigError(f"unknown outcome kind {self.outcome_kind!r}")
        if self.adv_loss not in ADV_LOSSES:
            raise ConfigError(f"unknown adversarial loss {self.adv_loss!r}")
        if not 0.0 <= self.best_after <= 1.0:
            raise ConfigError("best_after is a fraction of the epochs")

    def net_configs(self, d_in: int) -> dict[str, MlpConfig]:
        r = self.rep_dim
        f_out = "sigmoid" if self.outcome_kind == "binary" else "identity"
        return {
            "g": MlpConfig((d_in, *self.g_hidden, r), self.g_activation, "identity"),
            "c": MlpConfig((r + 1, *self.c_hidden, self.c_out), self.c_activation, "identity"),
            "d": MlpConfig((self.c_out, *self.d_hidden, 1), self.d_activation, "sigmoid"),
            "f": MlpConfig((r + 1, *self.f_hidden, 1), self.f_activation, f_out),
        }

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DrlConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown DRL config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Scaler:
    """Affine maps between raw units and the units the networks train in."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    t_mean: float = 0.0
    t_scale: float = 1.0
    y_mean: float = 0.0
    y_scale: float = 1.0

    @classmethod
    def identity(cls, d: int) -> "Scaler":
        return cls(np.zeros(d), np.ones(d))

    @classmethod
    def fit(cls, data: Dataset) -> "Scaler":
        def spread(v):
            s = np.std(v, axis=0)
            return np.where(s > 1e-12, s, 1.0)

        x_scale = spread(data.x)
        if data.outcome_kind == "binary":
            y_mean, y_scale = 0.0, 1.0
        else:
            y_mean, y_scale = float(data.y.mean()), float(spread(data.y))
        return cls(data.x.mean(axis=0), x_scale, float(data.t.mean()), float(spread(data.t)), y_mean, y_scale)

    def x(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_mean) / self.x_scale

    def t(self, t: np.ndarray) -> np.ndarray:
        return (np.asarray(t, dtype=np.float64) - self.t_mean) / self.t_scale

    def y(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_scale

    def y_inverse(self, y: np.ndarray) -> np.ndarray:
        return y * self.y_scale + self.y_mean

    def transform(self, data: Dataset) -> Dataset:
        return Dataset(self.x(data.x), self.t(data.t), self.y(data.y), data.outcome_kind)

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(), "x_scale": self.x_scale.tolist(),
            "t_mean": self.t_mean, "t_scale": self.t_scale,
            "y_mean": self.y_mean, "y_scale": self.y_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(
            np.asarray(d["x_mean"], dtype=np.float64), np.asarray(d["x_scale"], dtype=np.float64),
            float(d["t_mean"]), float(d["t_scale"]), float(d["y_mean"]), float(d["y_scale"]),
        )


class DrlModel:
    """The four networks, their optimizers and the input/output scaling.

    Step functions work in scaled units; :func:`representations`,
    :func:`predict` and :func:`discriminator_outputs` take raw units.
    """

    def __init__(self, g: Mlp, c: Mlp, d: Mlp, f: Mlp, config: DrlConfig, scaler: Scaler | None = None):
        r = config.rep_dim
        if g.out_dim != r or c.in_dim != r + 1 or d.in_dim != c.out_dim or f.in_dim != r + 1 or d.out_dim != 1 or f.out_dim != 1:
            raise DimensionError("network widths do not chain: G->r, C:(r+1)->k, D:k->1, F:(r+1)->1")
        self.g, self.c, self.d, self.f = g, c, d, f
        self.config = config
        self.opt_cd = Adam(c.params + d.params, lr=config.lr_d)
        self.opt_g = Adam(g.params, lr=config.lr_g)
        self.opt_f = Adam(f.params, lr=config.lr_f)
        self.scaler = Scaler.identity(g.in_dim) if scaler is None else scaler
        self._last_d = (float("nan"), float("nan"))

    @classmethod
    def init(cls, d_in: int, config: DrlConfig, rng: np.random.Generator | None = None) -> "DrlModel":
        rng = np.random.default_rng(config.seed) if rng is None else rng
        cfgs = config.net_configs(d_in)
        nets = {k: mlp_new(cfgs[k], rng, name=k) for k in ("g", "c", "d", "f")}
        return cls(nets["g"], nets["c"], nets["d"], nets["f"], config)

    @property
    def nets(self) -> dict[str, Mlp]:
        return {"g": self.g, "c": self.c, "d": self.d, "f": self.f}

    @property
    def d_in(self) -> int:
        return self.g.in_dim

    def all_params(self) -> list[Node]:
        return self.g.params + self.c.params + self.d.params + self.f.params

    def zero_grad(self) -> None:
        ad.zero_grad(self.all_params())

    def snapshot(self) -> dict[str, list[np.ndarray]]:
        return {k: net.snapshot() for k, net in self.nets.items()}

    def restore(self, snap: dict[str, list[np.ndarray]]) -> None:
        for k, net in self.nets.items():
            net.restore(snap[k])

    def outcome_loss(self, pred: Node, y) -> Node:
        return bce_loss(pred, y) if self.config.outcome_kind == "binary" else mse_loss(pred, y)


def _col(v) -> Node:
    return Node(np.asarray(v, dtype=np.float64).reshape(-1, 1), op="const")


def _check_finite(value: float, what: str, x_batch: np.ndarray) -> None:
    if not np.isfinite(value):
        raise NumericError(
            f"{what} is not finite (batch rows={len(x_batch)}, |x|max={np.abs(x_batch).max():.3g})"
        )


def sample_virtual(n: int, r: int, rng: np.random.Generator) -> np.ndarray:
    """Virtual representations: i.i.d. standard normal, independent of everything else."""
    if n < 1 or r < 1:
        raise ConfigError("n and r must be at least 1")
    return rng.standard_normal(size=(n, r))


def correlation_features(c_net: Mlp, rep, t) -> Node:
    rep = ad.as_node(rep)
    t_col = t if isinstance(t, Node) else _col(t)
    if rep.value.ndim != 2 or rep.shape[1] + 1 != c_net.in_dim:
        raise DimensionError(f"representation width {rep.shape} does not match C input {c_net.in_dim}")
    return c_net(ad.concat_columns(rep, t_col))


def discriminator_objective(model: DrlModel, x_real_rep, x_fake_rep, t) -> tuple[Node, Node, Node]:
    """Returns (l_d, D(real), D(fake)); l_d = E log D(C(X^R,t)) + E log(1 - D(C(X^G,t)))."""
    t_col = _col(t)
    d_real = model.d(correlation_features(model.c, x_real_rep, t_col))
    d_fake = model.d(correlation_features(model.c, x_fake_rep, t_col))
    l_d = ad.add(ad.mean(ad.log(d_real)), ad.mean(ad.log(ad.add(ad.neg(d_fake), 1.0))))
    return l_d, d_real, d_fake


def generator_objective(model: DrlModel, x_batch, t_batch, y_batch) -> tuple[Node, Node, Node]:
    """Returns (l_g, adversarial term, outcome loss)."""
    t_col = _col(t_batch)
    rep = model.g(Node(x_batch, op="const"))
    d_fake = model.d(correlation_features(model.c, rep, t_col))
    if model.config.adv_loss == "minimax":
        adv = ad.mean(ad.log(ad.add(ad.neg(d_fake), 1.0)))
    else:
        adv = ad.neg(ad.mean(ad.log(d_fake)))
    y_hat = model.f(ad.concat_columns(rep, t_col))
    fit = model.outcome_loss(y_hat, y_batch)
    return ad.add(adv, ad.mul(fit, model.config.w_c)), adv, fit


def counterfactual_objective(model: DrlModel, x_batch, t_batch, y_batch) -> Node:
    rep = Node(model.g(Node(x_batch, op="const")).value, op="const")
    y_hat = model.f(ad.concat_columns(rep, _col(t_batch)))
    return model.outcome_loss(y_hat, y_batch)


def step_discriminator(model: DrlModel, x_batch, t_batch, rng: np.random.Generator) -> float:
    """One ascent step on l_d for C and D; returns l_d before the update."""
    x_batch = np.asarray(x_batch, dtype=np.float64)
    x_r = sample_virtual(len(x_batch), model.config.rep_dim, rng)
    x_g = model.g(Node(x_batch, op="const")).value
    l_d, d_real, d_fake = discriminator_objective(model, x_r, x_g, t_batch)
    value = float(l_d.value)
    _check_finite(value, "discriminator objective", x_batch)
    model.zero_grad()
    ad.backward(ad.neg(l_d))
    model.opt_cd.step()
    model._last_d = (float(d_real.value.mean()), float(d_fake.value.mean()))
    return value


def step_generator(model: DrlModel, x_batch, t_batch, y_batch, rng: np.random.Generator | None = None) -> float:
    """One descent step on l_g for G only; returns l_g before the update."""
    l_g, _, _ = generator_objective(model, np.asarray(x_batch, dtype=np.float64), t_batch, y_batch)
    value = float(l_g.value)
    _check_finite(value, "generator objective", np.asarray(x_batch))
    model.zero_grad()
    ad.backward(l_g)
    model.opt_g.step()
    return value


def step_counterfactual(model: DrlModel, x_batch, t_batch, y_batch) -> float:
    """One descent step on the outcome loss for F only; returns the loss before the update."""
    l_c = counterfactual_objective(model, np.asarray(x_batch, dtype=np.float64), t_batch, y_batch)
    value = float(l_c.value)
    _check_finite(value, "counterfactual loss", np.asarray(x_batch))
    model.zero_grad()
    ad.backward(l_c)
    model.opt_f.step()
    return value


@dataclass
class EpochRecord:
    epoch: int
    l_d: float
    l_g: float
    l_c: float
    d_real: float
    d_fake: float
    val_l_c: float | None = None


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_dict(self) -> dict:
        return {"best_epoch": self.best_epoch, "records": [asdict(r) for r in self.records]}


def representations(model: DrlModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise DimensionError(f"covariates have shape {x.shape}, model expects width {model.d_in}")
    return model.g(Node(model.scaler.x(x), op="const")).value


def predict(model: DrlModel, x, t_query) -> np.ndarray:
    """Outcome predictions at arbitrary treatment values; probabilities for binary outcomes."""
    rep = representations(model, x)
    t_query = np.asarray(t_query, dtype=np.float64).reshape(-1)
    if len(t_query) != len(rep):
        raise DimensionError(f"{len(rep)} rows against {len(t_query)} treatment values")
    out = model.f(ad.concat_columns(Node(rep, op="const"), _col(model.scaler.t(t_query)))).value.reshape(-1)
    if model.config.outcome_kind == "binary":
        # float64 sigmoid saturates to exactly 0 or 1 for large logits
        return np.clip(out, PROB_EPS, 1.0 - PROB_EPS)
    return model.scaler.y_inverse(out)


def discriminator_outputs(model: DrlModel, x, t, rng: np.random.Generator) -> tuple[float, float]:
    """Mean D output on virtual (real) and generated (fake) correlation features."""
    x = np.asarray(x, dtype=np.float64)
    x_r = sample_virtual(len(x), model.config.rep_dim, rng)
    _, d_real, d_fake = discriminator_objective(model, x_r, representations(model, x), model.scaler.t(t))
    return float(d_real.value.mean()), float(d_fake.value.mean())


def validation_loss(model: DrlModel, data: Dataset) -> float:
    """Outcome loss on raw-unit data, measured in the model's training units."""
    sc = model.scaler
    return float(counterfactual_objective(model, sc.x(data.x), sc.t(data.t), sc.y(data.y)).value)


def train(
    dataset: Dataset,
    config: DrlConfig,
    val: Dataset | None = None,
    model: DrlModel | None = None,
) -> tuple[DrlModel, TrainHistory]:
    """Alternating C/D, G, F updates over shuffled minibatches.

    With ``val`` and ``config.keep_best`` the returned model is the snapshot
    with the lowest validation outcome loss among epochs past
    ``best_after * epochs``; earlier epochs are excluded because the
    representation has not been de-confounded yet.
    """
    if dataset.outcome_kind != config.outcome_kind:
        config = replace(config, outcome_kind=dataset.outcome_kind)
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = DrlModel.init(dataset.d, config, rng)
        if config.standardize:
            model.scaler = Scaler.fit(dataset)
    raw_val = val
    dataset = model.scaler.transform(dataset)
    history = TrainHistory()
    n = dataset.n
    bs = min(config.batch_size, n)
    best = (np.inf, None)
    first_eligible = int(np.floor(config.best_after * config.epochs))
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(5)
        n_batches = 0
        try:
            for start in range(0, n, bs):
                idx = perm[start:start + bs]
                xb, tb, yb = dataset.x[idx], dataset.t[idx], dataset.y[idx]
                for _ in range(config.steps_d):
                    l_d = step_discriminator(model, xb, tb, rng)
                d_real, d_fake = model._last_d
                for _ in range(config.steps_g):
                    l_g = step_generator(model, xb, tb, yb, rng)
                for _ in range(config.steps_f):
                    l_c = step_counterfactual(model, xb, tb, yb)
                sums += (l_d, l_g, l_c, d_real, d_fake)
                n_batches += 1
        except NumericError as exc:
            raise TrainingError(f"training diverged at epoch {epoch}: {exc}", history) from exc
        rec = EpochRecord(epoch, *(sums / n_batches).tolist())
        if val is not None:
            rec.val_l_c = validation_loss(model, raw_val)
            if config.keep_best and epoch >= first_eligible and rec.val_l_c < best[0]:
                best = (rec.val_l_c, model.snapshot())
                history.best_epoch = epoch
        history.records.append(rec)
        if epoch % 50 == 0:
            logger.debug("epoch %d %s", epoch, rec)
    if best[1] is not None:
        model.restore(best[1])
    return model, history
