"""Reverse-mode automatic differentiation over float64 numpy arrays."""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "_grad", "_prev", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, _prev=(), op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self._grad = None
        self._prev = _prev
        self._backward = None
        self.op = op

    @property
    def grad(self) -> np.ndarray:
        # allocated on first touch; forward-only tensors never pay for it
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor({self.data!r}, op={self.op!r})"

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        _check_broadcast(self, other)
        out = Tensor(self.data + other.data, (self, other), "add")

        def _bw():
            self.grad += _unbroadcast(out.grad, self.shape)
            other.grad += _unbroadcast(out.grad, other.shape)
        out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,), "neg")

        def _bw():
            self.grad -= out.grad
        out._backward = _bw
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        _check_broadcast(self, other)
        out = Tensor(self.data * other.data, (self, other), "mul")

        def _bw():
            self.grad += _unbroadcast(out.grad * other.data, self.shape)
            other.grad += _unbroadcast(out.grad * self.data, other.shape)
        out._backward = _bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return self * (1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], (self,), "index")

        def _bw():
            np.add.at(self.grad, idx, out.grad)
        out._backward = _bw
        return out

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def detach(self):
        return Tensor(self.data.copy(), (), "detach")

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, (), "const")


def _check_broadcast(a: Tensor, b: Tensor):
    if a.data.shape == b.data.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, (a, b), "matmul")

    def _bw():
        g = out.grad
        a.grad += _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        b.grad += _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
    out._backward = _bw
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(np.swapaxes(a.data, -1, -2), (a,), "transpose")

    def _bw():
        a.grad += np.swapaxes(out.grad, -1, -2)
    out._backward = _bw
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,), "reshape")

    def _bw():
        a.grad += out.grad.reshape(a.shape)
    out._backward = _bw
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0), (a,), "relu")

    def _bw():
        a.grad += out.grad * mask
    out._backward = _bw
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s, (a,), "sigmoid")

    def _bw():
        a.grad += out.grad * s * (1.0 - s)
    out._backward = _bw
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = Tensor(t, (a,), "tanh")

    def _bw():
        a.grad += out.grad * (1.0 - t * t)
    out._backward = _bw
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, (a,), "softmax")

    def _bw():
        g = out.grad
        a.grad += s * (g - (g * s).sum(axis=axis, keepdims=True))
    out._backward = _bw
    return out


def concat(parts, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    out = Tensor(data, tuple(parts), "concat")
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def _bw():
        for p, g in zip(parts, np.split(out.grad, bounds, axis=axis)):
            p.grad += g
    out._backward = _bw
    return out


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum")

    def _bw():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.grad += np.broadcast_to(g, a.shape)
    out._backward = _bw
    return out


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def aggregate(x: Tensor, index_sets, reduce: str = "mean") -> Tensor:
    """Row i of the output reduces the rows of `x` listed in index_sets[i]."""
    n_out = len(index_sets)
    w = np.zeros((n_out, x.shape[-2]))
    for i, idx in enumerate(index_sets):
        idx = list(idx)
        if not idx:
            continue
        w[i, idx] = 1.0 / len(idx) if reduce == "mean" else 1.0
    if reduce not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduce!r}")
    return matmul(Tensor(w), x)


def mse(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return (d * d).mean()


def straight_through(soft: Tensor, hard: np.ndarray) -> Tensor:
    """Forward value `hard`, gradient routed to `soft` unchanged."""
    out = Tensor(np.asarray(hard, dtype=np.float64), (soft,), "straight_through")

    def _bw():
        soft.grad += out.grad
    out._backward = _bw
    return out


def clip_pass(a: Tensor, lo, hi) -> Tensor:
    """Clamp values; gradient flows only where the value was inside [lo, hi]."""
    inside = (a.data >= lo) & (a.data <= hi)
    out = Tensor(np.clip(a.data, lo, hi), (a,), "clip")

    def _bw():
        a.grad += out.grad * inside
    out._backward = _bw
    return out


def _topo(root: Tensor) -> list[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo(loss)
    for node in order:
        if node._prev:
            node._grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward()
