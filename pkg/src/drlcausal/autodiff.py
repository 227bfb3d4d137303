"""A small define-by-run reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the MLPs and the adversarial losses need are provided.
Binary elementwise ops require equal shapes; the two exceptions are a python
scalar operand and :func:`add_row`, which adds a ``1 x k`` bias row to every
row of an ``n x k`` matrix.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericError

LOG_FLOOR = 1e-7


class Node:
    """A value in the computation graph together with its accumulated gradient."""

    __slots__ = ("value", "grad", "op", "parents", "name", "_backward")

    def __init__(self, value, parents: Sequence["Node"] = (), op: str = "leaf", name: str | None = None):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.op = op
        self.parents = tuple(parents)
        self.name = name
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x, op="const")


def _same_shape(a: Node, b: Node, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = Node(a.value @ b.value, (a, b), "matmul")

    def _backward():
        a.grad += out.grad @ b.value.T
        b.grad += a.value.T @ out.grad

    out._backward = _backward
    return out


def add(a: Node, b) -> Node:
    a = as_node(a)
    if np.isscalar(b):
        out = Node(a.value + b, (a,), "add")

        def _backward():
            a.grad += out.grad

        out._backward = _backward
        return out
    b = as_node(b)
    _same_shape(a, b, "add")
    out = Node(a.value + b.value, (a, b), "add")

    def _backward():
        a.grad += out.grad
        b.grad += out.grad

    out._backward = _backward
    return out


def sub(a: Node, b) -> Node:
    if np.isscalar(b):
        return add(a, -b)
    a, b = as_node(a), as_node(b)
    _same_shape(a, b, "sub")
    out = Node(a.value - b.value, (a, b), "sub")

    def _backward():
        a.grad += out.grad
        b.grad -= out.grad

    out._backward = _backward
    return out


def mul(a: Node, b) -> Node:
    a = as_node(a)
    if np.isscalar(b):
        c = float(b)
        out = Node(a.value * c, (a,), "mul")

        def _backward():
            a.grad += c * out.grad

        out._backward = _backward
        return out
    b = as_node(b)
    _same_shape(a, b, "mul")
    out = Node(a.value * b.value, (a, b), "mul")

    def _backward():
        a.grad += b.value * out.grad
        b.grad += a.value * out.grad

    out._backward = _backward
    return out


def neg(a: Node) -> Node:
    return mul(a, -1.0)


def add_row(a: Node, row: Node) -> Node:
    """``a + row`` where ``row`` (shape ``(1, k)`` or ``(k,)``) is added to every row of ``a``."""
    a, row = as_node(a), as_node(row)
    k = row.value.size
    if a.value.ndim != 2 or a.shape[1] != k or row.value.ndim > 2 or (row.value.ndim == 2 and row.shape[0] != 1):
        raise DimensionError(f"add_row: cannot add {row.shape} to rows of {a.shape}")
    out = Node(a.value + row.value.reshape(1, k), (a, row), "add_row")

    def _backward():
        a.grad += out.grad
        row.grad += out.grad.sum(axis=0).reshape(row.shape)

    out._backward = _backward
    return out


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Node) -> Node:
    a = as_node(a)
    s = stable_sigmoid(a.value)
    out = Node(s, (a,), "sigmoid")

    def _backward():
        a.grad += s * (1.0 - s) * out.grad

    out._backward = _backward
    return out


def tanh(a: Node) -> Node:
    a = as_node(a)
    th = np.tanh(a.value)
    out = Node(th, (a,), "tanh")

    def _backward():
        a.grad += (1.0 - th * th) * out.grad

    out._backward = _backward
    return out


def relu(a: Node) -> Node:
    a = as_node(a)
    mask = a.value > 0
    out = Node(np.where(mask, a.value, 0.0), (a,), "relu")

    def _backward():
        a.grad += mask * out.grad

    out._backward = _backward
    return out


def log(a: Node) -> Node:
    """Natural log with the argument clamped to ``[LOG_FLOOR, inf)``; clamped entries get zero gradient."""
    a = as_node(a)
    live = a.value > LOG_FLOOR
    x = np.maximum(a.value, LOG_FLOOR)
    out = Node(np.log(x), (a,), "log")

    def _backward():
        a.grad += np.where(live, out.grad / x, 0.0)

    out._backward = _backward
    return out


def total(a: Node) -> Node:
    a = as_node(a)
    if a.value.size == 0:
        raise DomainError("sum of an empty tensor")
    out = Node(a.value.sum(), (a,), "sum")

    def _backward():
        a.grad += out.grad

    out._backward = _backward
    return out


def mean(a: Node) -> Node:
    a = as_node(a)
    n = a.value.size
    if n == 0:
        raise DomainError("mean of an empty tensor")
    out = Node(a.value.mean(), (a,), "mean")

    def _backward():
        a.grad += out.grad / n

    out._backward = _backward
    return out


def concat_columns(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_columns: row counts differ ({a.shape} vs {b.shape})")
    p = a.shape[1]
    out = Node(np.concatenate([a.value, b.value], axis=1), (a, b), "concat")

    def _backward():
        a.grad += out.grad[:, :p]
        b.grad += out.grad[:, p:]

    out._backward = _backward
    return out


def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every node reachable from ``root``.

    Gradients accumulate across calls; zero parameters between steps.
    Intermediate nodes are reset before propagation so a repeated call on the
    same graph adds exactly one more copy of each gradient.
    """
    if root.value.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topological(root)
    for node in order:
        if node.parents:
            node.grad = np.zeros_like(node.value)
    root.grad = root.grad + 1.0
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.zero_grad()


def grad_check(f: Callable[[], Node], params: Sequence[Node], step: float = 1e-5) -> float:
    """Largest ``|analytic - numeric| / max(1, |numeric|)`` over every parameter entry.

    ``f`` rebuilds the scalar loss from the current parameter values each call.
    Numeric derivatives are central differences with the given step.
    """
    if step <= 0:
        raise DomainError("grad_check step must be positive")
    zero_grad(params)
    loss = f()
    if not np.isfinite(loss.value).all():
        raise NumericError("grad_check: loss is not finite")
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(f().value)
            flat[i] = orig - step
            down = float(f().value)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"grad_check: non-finite loss perturbing {p!r}")
            numeric = (up - down) / (2.0 * step)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
