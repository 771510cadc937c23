"""Reverse-mode differentiation over matrix values, as a minimal tape.

The op set covers exactly what the transformer forward pass needs: matrix
product, same-shape add and elementwise multiply, constant scaling,
transpose, column slice/concat, silu, per-row RMS norm, causally-masked row
softmax, embedding row gather, and mean cross entropy. Each node stores its
parents, a vector-Jacobian closure, and a recompute closure so the recorded
graph can be replayed forward bit-for-bit.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logsumexp

from .errors import ShapeError, ValidationError
from .model import causal_softmax


class Tensor:
    """A node in the recorded computation graph."""

    __slots__ = ("value", "grad", "_parents", "_vjp", "_compute")

    def __init__(self, value, parents=(), vjp=None, compute=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjp = vjp
        self._compute = compute

    @property
    def shape(self):
        return self.value.shape

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        kind = "leaf" if self._vjp is None else "op"
        return f"Tensor({kind}, shape={self.value.shape})"


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable node."""
    if loss.value.size != 1:
        raise ValidationError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = loss.grad + np.ones_like(loss.value)
    for node in reversed(order):
        if node._vjp is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            parent.grad = parent.grad + g


def replay(loss: Tensor) -> float:
    """Recompute the recorded graph forward and return the loss value."""
    if loss._compute is None and not loss._parents:
        return float(loss.value)
    values: dict[int, np.ndarray] = {}
    for node in _topo_order(loss):
        if node._compute is None:
            values[id(node)] = node.value
        else:
            values[id(node)] = node._compute(*[values[id(p)] for p in node._parents])
    return float(values[id(loss)])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[-1] != b.value.shape[0]:
        raise ShapeError(f"cannot multiply {a.value.shape} by {b.value.shape}")

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return Tensor(a.value @ b.value, (a, b), vjp, compute=lambda av, bv: av @ bv)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add requires identical shapes, got {a.value.shape} and {b.value.shape}")
    return Tensor(a.value + b.value, (a, b), lambda g: (g, g), compute=lambda av, bv: av + bv)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul requires identical shapes, got {a.value.shape} and {b.value.shape}")

    def vjp(g):
        return g * b.value, g * a.value

    return Tensor(a.value * b.value, (a, b), vjp, compute=lambda av, bv: av * bv)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(c * a.value, (a,), lambda g: (c * g,), compute=lambda av: c * av)


def transpose(a: Tensor) -> Tensor:
    return Tensor(a.value.T.copy(), (a,), lambda g: (g.T,), compute=lambda av: av.T.copy())


def col_slice(a: Tensor, j0: int, j1: int) -> Tensor:
    def vjp(g):
        da = np.zeros_like(a.value)
        da[:, j0:j1] = g
        return (da,)

    return Tensor(a.value[:, j0:j1].copy(), (a,), vjp, compute=lambda av: av[:, j0:j1].copy())


def concat_cols(parts: list[Tensor]) -> Tensor:
    widths = [p.value.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return Tensor(
        np.concatenate([p.value for p in parts], axis=1),
        tuple(parts),
        vjp,
        compute=lambda *vals: np.concatenate(vals, axis=1),
    )


def silu(a: Tensor) -> Tensor:
    sig = expit(a.value)

    def vjp(g):
        return (g * (sig * (1.0 + a.value * (1.0 - sig))),)

    return Tensor(a.value * sig, (a,), vjp, compute=lambda av: av * expit(av))


def rmsnorm_rows(x: Tensor, w: Tensor) -> Tensor:
    """Per-row RMS normalisation with elementwise weight, matching model.rmsnorm_rows."""
    xv, wv = x.value, w.value
    if xv.shape[1] != wv.shape[0]:
        raise ShapeError(f"norm weight length {wv.shape[0]} does not match row width {xv.shape[1]}")
    d = xv.shape[1]
    r = np.sqrt(np.mean(xv * xv, axis=1, keepdims=True))
    if np.any(r == 0.0):
        raise ValidationError("rmsnorm of an all-zero row is undefined")

    def vjp(g):
        gw = g * wv
        dot = np.sum(gw * xv, axis=1, keepdims=True)
        dx = gw / r - xv * (dot / (d * r**3))
        dw = np.sum(g * (xv / r), axis=0)
        return dx, dw

    return Tensor(
        (xv / r) * wv,
        (x, w),
        vjp,
        compute=lambda xv_, wv_: (xv_ / np.sqrt(np.mean(xv_ * xv_, axis=1, keepdims=True))) * wv_,
    )


def causal_row_softmax(scores: Tensor) -> Tensor:
    p = causal_softmax(scores.value)

    def vjp(g):
        return (p * (g - np.sum(g * p, axis=1, keepdims=True)),)

    return Tensor(p, (scores,), vjp, compute=causal_softmax)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def vjp(g):
        dt = np.zeros_like(table.value)
        np.add.at(dt, ids, g)
        return (dt,)

    return Tensor(table.value[ids], (table,), vjp, compute=lambda tv: tv[ids])


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood (natural log) of one target per row."""
    targets = np.asarray(targets, dtype=np.int64)
    lv = logits.value
    if targets.ndim != 1 or targets.shape[0] != lv.shape[0]:
        raise ShapeError(f"need one target per logit row: {targets.shape} vs {lv.shape}")
    if np.any((targets < 0) | (targets >= lv.shape[1])):
        bad = int(np.nonzero((targets < 0) | (targets >= lv.shape[1]))[0][0])
        raise ValidationError(
            f"target id {int(targets[bad])} at position {bad} is outside the "
            f"{lv.shape[1]}-way logit rows"
        )
    n = lv.shape[0]
    rows = np.arange(n)

    def compute(lv_):
        lse = logsumexp(lv_, axis=1)
        return np.asarray(np.mean(lse - lv_[rows, targets]))

    def vjp(g):
        p = np.exp(lv - logsumexp(lv, axis=1, keepdims=True))
        p[rows, targets] -= 1.0
        return (p * (float(g) / n),)

    return Tensor(compute(lv), (logits,), vjp, compute=compute)


class GradientTape:
    """Owns parameter tensors and one forward/backward recording at a time."""

    def __init__(self, params: dict[str, Tensor]):
        self.params = params
        self.loss: Tensor | None = None

    def forward(self, builder) -> float:
        """Record builder(params) -> scalar loss Tensor; returns the loss value."""
        self.zero_grad()
        self.loss = builder(self.params)
        if self.loss.value.size != 1:
            raise ValidationError("the recorded loss must be a scalar")
        return float(self.loss.value)

    def backward(self) -> dict[str, np.ndarray]:
        """Gradients per parameter; parameters the loss never touched get exact zeros."""
        if self.loss is None:
            raise ValidationError("backward called before forward: no loss recorded")
        backward(self.loss)
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.value))
            for name, p in self.params.items()
        }

    def replay(self) -> float:
        """Recompute the recorded graph; must reproduce the stored loss exactly."""
        if self.loss is None:
            raise ValidationError("replay called before forward: no loss recorded")
        return replay(self.loss)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
