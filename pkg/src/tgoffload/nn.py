"""Parameters, layers, Gumbel-Softmax, Adam and the checkpoint container."""
from __future__ import annotations

import io
import struct
from collections import OrderedDict

import numpy as np

from .autodiff import ShapeError, Tensor, as_tensor, concat, relu, sigmoid, softmax, straight_through, tanh

CKPT_MAGIC = b"TGDK"
CKPT_VERSION = 1


class ParamSet:
    """Named parameters with Adam moments."""

    def __init__(self):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Tensor(np.array(value, dtype=np.float64))
        self.params[name] = p
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)
        return p

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for k, p in self.params.items():
            if arrays[k].shape != p.data.shape:
                raise ShapeError(f"{k}: shape {arrays[k].shape} != {p.data.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)

    def n_values(self) -> int:
        return sum(p.data.size for p in self.params.values())


def adam_step(ps: ParamSet, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected adaptive-moment update; clears gradients."""
    ps.t += 1
    c1 = 1.0 - b1 ** ps.t
    c2 = 1.0 - b2 ** ps.t
    for name, p in ps.params.items():
        g = p.grad
        m = ps.m[name] = b1 * ps.m[name] + (1.0 - b1) * g
        v = ps.v[name] = b2 * ps.v[name] + (1.0 - b2) * g * g
        if lr:
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    ps.zero_grad()


def fan_in_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class Dense:
    def __init__(self, ps: ParamSet, name: str, n_in: int, n_out: int, rng: np.random.Generator):
        self.n_in, self.n_out = n_in, n_out
        self.W = ps.add(f"{name}.W", fan_in_uniform(rng, n_in, (n_in, n_out)))
        self.b = ps.add(f"{name}.b", np.zeros(n_out))

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"dense layer expects {self.n_in} inputs, got {x.shape[-1]}")
        return x @ self.W + self.b


class GRUCell:
    """h' = z*n + (1-z)*h with update gate z, reset gate r and candidate n."""

    def __init__(self, ps: ParamSet, name: str, n_in: int, n_hidden: int, rng: np.random.Generator):
        self.n_in, self.n_hidden = n_in, n_hidden
        fan = n_hidden
        self.Wx = ps.add(f"{name}.Wx", fan_in_uniform(rng, fan, (n_in, 3 * n_hidden)))
        self.Wh = ps.add(f"{name}.Wh", fan_in_uniform(rng, fan, (n_hidden, 2 * n_hidden)))
        self.Wn = ps.add(f"{name}.Wn", fan_in_uniform(rng, fan, (n_hidden, n_hidden)))
        self.b = ps.add(f"{name}.b", np.zeros(3 * n_hidden))

    def __call__(self, x, h) -> Tensor:
        x, h = as_tensor(x), as_tensor(h)
        if x.shape[-1] != self.n_in or h.shape[-1] != self.n_hidden:
            raise ShapeError(f"GRU cell expects ({self.n_in}, {self.n_hidden}), got ({x.shape[-1]}, {h.shape[-1]})")
        k = self.n_hidden
        xs = x @ self.Wx + self.b
        hs = h @ self.Wh
        z = sigmoid(xs[..., :k] + hs[..., :k])
        r = sigmoid(xs[..., k:2 * k] + hs[..., k:])
        n = tanh(xs[..., 2 * k:] + (r * h) @ self.Wn)
        return z * n + (1.0 - z) * h


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(np.finfo(float).tiny, 1.0, shape)
    return -np.log(-np.log(u))


def gumbel_softmax(logits, temperature: float = 1.0, hard: bool = True, rng=None, noise=None) -> Tensor:
    """Relaxed categorical sample; hard mode is one-hot forward, soft backward.

    Noise comes from `noise` if given, else from `rng`, else is zero.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    logits = as_tensor(logits)
    if noise is None:
        noise = gumbel_noise(rng, logits.shape) if rng is not None else np.zeros(logits.shape)
    soft = softmax((logits + noise) * (1.0 / temperature), axis=-1)
    if not hard:
        return soft
    idx = soft.data.argmax(axis=-1)
    onehot = np.zeros_like(soft.data)
    np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
    return straight_through(soft, onehot)


def mlp(layers, x, final=None) -> Tensor:
    for layer in layers[:-1]:
        x = relu(layer(x))
    x = layers[-1](x)
    return final(x) if final else x


# ---- checkpoint container ----------------------------------------------

def dumps_checkpoint(arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<BI", CKPT_VERSION, len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")  # keeps 0-d shapes; tobytes handles layout
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def loads_checkpoint(blob: bytes) -> OrderedDict:
    if blob[:4] != CKPT_MAGIC:
        raise ValueError("not a checkpoint: bad magic")
    version, count = struct.unpack_from("<BI", blob, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 9
    out = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(blob):
        raise ValueError("trailing bytes after last checkpoint record")
    return out


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(arrays))


def load_checkpoint(path) -> OrderedDict:
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())


def prefixed(prefix: str, ps: ParamSet) -> dict[str, np.ndarray]:
    return {f"{prefix}{k}": v for k, v in ps.arrays().items()}


def unprefixed(prefix: str, arrays: dict) -> dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


__all__ = ["ParamSet", "Dense", "GRUCell", "adam_step", "gumbel_softmax", "gumbel_noise", "concat",
           "dumps_checkpoint", "loads_checkpoint", "save_checkpoint", "load_checkpoint"]
