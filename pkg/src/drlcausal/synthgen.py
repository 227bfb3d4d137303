"""Synthetic benchmark scenarios A-D with known treatment effect.

Covariates are multivariate normal with a random symmetric covariance.
Treatment and outcome are built from either a linear or a sigmoid link:

========  ===========  ===========
scenario  treatment    outcome
========  ===========  ===========
A         line         line
B         line         nonL
C         nonL         line
D         nonL         nonL
========  ===========  ===========
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import stable_sigmoid as sigmoid
from .errors import ConfigError, DimensionError, NumericError

SCENARIOS = {
    "A": ("line", "line"),
    "B": ("line", "nonL"),
    "C": ("nonL", "line"),
    "D": ("nonL", "nonL"),
}
FORMS = ("line", "nonL")
W_TY = 5.0
EIG_FLOOR = 1e-6


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str
    n: int
    seed: int = 0
    d: int = 10
    noise_t_std: float = float(np.sqrt(0.3))
    noise_y_std: float = float(np.sqrt(0.5))

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of A, B, C, D")
        if self.d < 1 or self.n < 1:
            raise ConfigError("d and n must be at least 1")
        if self.noise_t_std <= 0 or self.noise_y_std <= 0:
            raise ConfigError("noise standard deviations must be positive")


@dataclass
class GroundTruth:
    covariance: np.ndarray
    w_xt: np.ndarray
    w_xy: np.ndarray
    t_form: str
    y_form: str
    w_ty: float = W_TY

    def to_dict(self) -> dict:
        return {
            "covariance": self.covariance.tolist(),
            "w_xt": self.w_xt.tolist(),
            "w_xy": self.w_xy.tolist(),
            "w_ty": self.w_ty,
            "t_form": self.t_form,
            "y_form": self.y_form,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            covariance=np.asarray(d["covariance"], dtype=np.float64),
            w_xt=np.asarray(d["w_xt"], dtype=np.float64),
            w_xy=np.asarray(d["w_xy"], dtype=np.float64),
            t_form=d["t_form"],
            y_form=d["y_form"],
            w_ty=float(d.get("w_ty", W_TY)),
        )


@dataclass
class Dataset:
    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    outcome_kind: str = "continuous"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.x.ndim != 2 or not (len(self.x) == len(self.t) == len(self.y)):
            raise DimensionError(f"dataset rows disagree: x {self.x.shape}, t {self.t.shape}, y {self.y.shape}")
        if self.outcome_kind not in ("continuous", "binary"):
            raise ConfigError(f"unknown outcome kind {self.outcome_kind!r}")

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.t[idx], self.y[idx], self.outcome_kind)


def gen_covariance(d: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetrised uniform matrix projected onto the PSD cone (eigenvalues floored at 1e-6)."""
    if d < 1:
        raise ConfigError("d must be at least 1")
    sigma = rng.uniform(-1.0, 1.0, size=(d, d))
    sym = 0.5 * (sigma + sigma.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.maximum(vals, EIG_FLOOR)
    cov = (vecs * vals) @ vecs.T
    return 0.5 * (cov + cov.T)


def sample_covariates(n: int, cov: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"covariance is not positive definite: {exc}") from exc
    z = rng.standard_normal(size=(n, cov.shape[0]))
    return z @ chol.T


def _link(form: str, z: np.ndarray) -> np.ndarray:
    return z if form == "line" else sigmoid(z)


def gen_treatment(x: np.ndarray, gt: GroundTruth, rng: np.random.Generator, noise_std: float) -> np.ndarray:
    if x.shape[1] != gt.w_xt.size:
        raise DimensionError(f"x has {x.shape[1]} columns, ground truth expects {gt.w_xt.size}")
    base = _link(gt.t_form, x @ gt.w_xt)
    if noise_std == 0:
        return base
    return base + rng.normal(0.0, noise_std, size=len(x))


def outcome_mean(x: np.ndarray, t: np.ndarray, gt: GroundTruth) -> np.ndarray:
    """Noise-free outcome surface f_y(x) + f_y(t)."""
    return _link(gt.y_form, x @ gt.w_xy) + _link(gt.y_form, gt.w_ty * np.asarray(t, dtype=np.float64))


def gen_outcome(x: np.ndarray, t: np.ndarray, gt: GroundTruth, rng: np.random.Generator, noise_std: float) -> np.ndarray:
    if x.shape[1] != gt.w_xy.size or len(t) != len(x):
        raise DimensionError("outcome inputs do not agree with the ground truth")
    mu = outcome_mean(x, t, gt)
    if noise_std == 0:
        return mu
    return mu + rng.normal(0.0, noise_std, size=len(x))


def make_scenario(spec: ScenarioSpec) -> tuple[Dataset, GroundTruth]:
    """Draw ground truth and data for one scenario instance.

    Separate child streams feed covariance, covariates, weights and noise, so
    scenarios sharing a seed share X (and A/B share t, C/D share t).
    """
    t_form, y_form = SCENARIOS[spec.scenario]
    streams = np.random.SeedSequence(spec.seed).spawn(5)
    rng_cov, rng_x, rng_w, rng_t, rng_y = (np.random.default_rng(s) for s in streams)
    cov = gen_covariance(spec.d, rng_cov)
    x = sample_covariates(spec.n, cov, rng_x)
    w_xt = rng_w.uniform(1.0, 5.0, size=spec.d)
    w_xy = rng_w.uniform(1.0, 5.0, size=spec.d)
    gt = GroundTruth(cov, w_xt, w_xy, t_form, y_form)
    t = gen_treatment(x, gt, rng_t, spec.noise_t_std)
    y = gen_outcome(x, t, gt, rng_y, spec.noise_y_std)
    return Dataset(x, t, y), gt


def true_mtef(gt: GroundTruth, t_level, dt: float):
    """Finite-difference marginal effect of the known outcome surface; the covariate part cancels."""
    if dt <= 0:
        raise ConfigError("dt must be positive")
    t_level = np.asarray(t_level, dtype=np.float64)
    if gt.y_form == "line":
        return np.full_like(t_level, gt.w_ty) if t_level.ndim else float(gt.w_ty)
    val = (sigmoid(np.atleast_1d(gt.w_ty * t_level)) - sigmoid(np.atleast_1d(gt.w_ty * (t_level - dt)))) / dt
    return val if t_level.ndim else float(val[0])
