"""Fully connected networks, losses and Adam on top of :mod:`drlcausal.autodiff`."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, DimensionError, DomainError, NumericError

HIDDEN_ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}
OUTPUT_ACTIVATIONS = {"identity": None, "sigmoid": ad.sigmoid}


@dataclass(frozen=True)
class MlpConfig:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ConfigError("an MLP needs at least an input and an output size")
        if any(s < 1 for s in self.layer_sizes):
            raise ConfigError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unknown output activation {self.output_activation!r}")

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        return cls(tuple(d["layer_sizes"]), d["hidden_activation"], d["output_activation"])


class Mlp:
    """Affine layers with a hidden activation between them and an optional output activation."""

    def __init__(self, config: MlpConfig, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], name: str = "mlp"):
        self.config = config
        self.name = name
        sizes = config.layer_sizes
        if len(weights) != len(sizes) - 1 or len(biases) != len(sizes) - 1:
            raise DimensionError(f"{name}: expected {len(sizes) - 1} layers, got {len(weights)}")
        self.weights: list[Node] = []
        self.biases: list[Node] = []
        for i, (w, b) in enumerate(zip(weights, biases)):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64).reshape(1, -1)
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (1, sizes[i + 1]):
                raise DimensionError(
                    f"{name} layer {i}: weight {w.shape} / bias {b.shape} do not chain with sizes {sizes}"
                )
            self.weights.append(Node(w, name=f"{name}.w{i}"))
            self.biases.append(Node(b, name=f"{name}.b{i}"))

    @property
    def params(self) -> list[Node]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def in_dim(self) -> int:
        return self.config.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.config.layer_sizes[-1]

    def __call__(self, x: Node) -> Node:
        return forward(self, x)

    def snapshot(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.params]

    def restore(self, values: Sequence[np.ndarray]) -> None:
        for p, v in zip(self.params, values):
            p.value = np.array(v, dtype=np.float64)
            p.zero_grad()


def mlp_new(config: MlpConfig, rng: np.random.Generator, name: str = "mlp") -> Mlp:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(config.layer_sizes[:-1], config.layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros((1, fan_out)))
    return Mlp(config, weights, biases, name=name)


def forward(mlp: Mlp, x: Node) -> Node:
    x = ad.as_node(x)
    if x.value.ndim != 2 or x.shape[1] != mlp.in_dim:
        raise DimensionError(f"{mlp.name}: input shape {x.shape} does not match input width {mlp.in_dim}")
    hidden = HIDDEN_ACTIVATIONS[mlp.config.hidden_activation]
    h = x
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = ad.add_row(ad.matmul(h, w), b)
        if i < last:
            h = hidden(h)
    out_act = OUTPUT_ACTIVATIONS[mlp.config.output_activation]
    return out_act(h) if out_act is not None else h


def _as_target(pred: Node, target) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    if target.size != pred.value.size:
        raise DimensionError(f"prediction has {pred.value.size} entries, target has {target.size}")
    if target.size == 0:
        raise DomainError("loss over an empty batch")
    return target.reshape(pred.shape)


def mse_loss(pred: Node, target) -> Node:
    target = _as_target(pred, target)
    diff = ad.sub(pred, Node(target, op="const"))
    return ad.mean(ad.mul(diff, diff))


def bce_loss(pred: Node, target) -> Node:
    """Binary cross-entropy; the clamped log keeps both terms finite for saturated ``pred``."""
    target = _as_target(pred, target)
    y = Node(target, op="const")
    one_minus_y = Node(1.0 - target, op="const")
    pos = ad.mul(y, ad.log(pred))
    negative = ad.mul(one_minus_y, ad.log(ad.add(ad.neg(pred), 1.0)))
    return ad.neg(ad.mean(ad.add(pos, negative)))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


class Adam:
    """Adam with bias correction. Callers zero gradients between steps."""

    def __init__(self, params: Sequence[Node], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.params = list(params)
        self.state = AdamState(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
            m=[np.zeros_like(p.value) for p in self.params],
            v=[np.zeros_like(p.value) for p in self.params],
        )

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)


def adam_step(params: Sequence[Node], grads: Sequence[np.ndarray], state: AdamState, lr: float | None = None) -> None:
    lr = state.lr if lr is None else lr
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    for p, g in zip(params, grads):
        if g.shape != p.value.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.name} {p.value.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {p.name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        p.value = p.value - lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)
