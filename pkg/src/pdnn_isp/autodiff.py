"""Small reverse-mode autodiff over dense float64 numpy arrays.

Operations executed inside ``with Tape() as tape:`` on tensors that require
gradients are recorded in order; ``tape.backward(root)`` walks the record
backwards and accumulates adjoints into ``Tensor.grad``. Outside a tape,
the same operations just compute values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError

_TAPES: list = []


class Tape:
    """Ordered record of primitive operations for one backward pass."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, out, inputs, backward):
        self.nodes.append((out, inputs, backward))

    def backward(self, root: "Tensor", grad=None):
        """Seed ``root`` with ``grad`` (ones by default) and propagate."""
        seed = np.ones_like(root.data) if grad is None else np.asarray(grad, dtype=float)
        if seed.shape != root.data.shape:
            raise ValueError(f"seed gradient shape {seed.shape} != root shape {root.data.shape}")
        root.grad = seed.copy()
        for out, inputs, fn in reversed(self.nodes):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for inp, g in zip(inputs, grads):
                if g is not None and inp.requires_grad:
                    inp._accumulate(g)


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=float)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        g = np.asarray(g, dtype=float)
        if g.shape != self.data.shape:
            g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def sum(self, axis=None):
        return tsum(self, axis)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data, inputs, backward, op):
    inputs = tuple(inputs)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs, name=op)
    if needs and _TAPES:
        _TAPES[-1].record(out, inputs, backward)
    return out


def _shape_error(op, *shapes):
    return ValueError(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


# --------------------------------------------------------------- primitives

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_error("add", a.shape, b.shape) from None
    return _make(data, (a, b), lambda g: (g, g), "add")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_error("mul", a.shape, b.shape) from None
    return _make(data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    data = a.data @ b.data

    def backward(g):
        if b.data.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _make(data, (a, b), backward, "matmul")


def square(a) -> Tensor:
    a = _wrap(a)
    return _make(a.data ** 2, (a,), lambda g: (2 * a.data * g,), "square")


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = _wrap(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def abs_smooth(a, eps: float = 1e-12) -> Tensor:
    """sqrt(x^2 + eps^2), a differentiable |x|."""
    a = _wrap(a)
    r = np.sqrt(a.data ** 2 + eps ** 2)
    return _make(r, (a,), lambda g: (g * a.data / r,), "abs_smooth")


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", a.shape, tuple(shape)) from None
    return _make(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes) -> Tensor:
    a = _wrap(a)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def tsum(a, axis=None) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % a.data.ndim for ax in axes)
        return (np.broadcast_to(np.expand_dims(g, axes), a.shape).copy(),)

    return _make(data, (a,), backward, "sum")


def gather(a, index, axis: int = -1) -> Tensor:
    """Select entries of ``a`` along ``axis`` (slice or integer index array)."""
    a = _wrap(a)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = index
    sl = tuple(sl)
    data = a.data[sl]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, sl, g)
        return (full,)

    return _make(data, (a,), backward, "gather")


def conv2d(x, w, b=None) -> Tensor:
    """3x3 convolution, stride 1, zero 'same' padding, single sample.

    x: (C_in, H, W); w: (C_out, C_in, 3, 3); b: (C_out,).
    """
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 3 or w.data.ndim != 4 or w.shape[1] != x.shape[0] or w.shape[2:] != (3, 3):
        raise _shape_error("conv2d", x.shape, w.shape)
    c_in, H, W = x.shape
    c_out = w.shape[0]
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2))          # (C_in, H, W, 3, 3)
    cols = np.ascontiguousarray(cols.transpose(0, 3, 4, 1, 2)).reshape(c_in * 9, H * W)
    wmat = w.data.reshape(c_out, c_in * 9)
    out = wmat @ cols
    inputs = [x, w]
    if b is not None:
        b = _wrap(b)
        if b.shape != (c_out,):
            raise _shape_error("conv2d bias", b.shape, (c_out,))
        out += b.data[:, None]
        inputs.append(b)
    out = out.reshape(c_out, H, W)

    def backward(g):
        g2 = g.reshape(c_out, H * W)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(c_in, 3, 3, H, W)
            gxp = np.zeros((c_in, H + 2, W + 2))
            for ki in range(3):
                for kj in range(3):
                    gxp[:, ki:ki + H, kj:kj + W] += gcols[:, ki, kj]
            gx = gxp[:, 1:-1, 1:-1]
        res = [gx, gw]
        if b is not None:
            res.append(g2.sum(axis=1))
        return tuple(res)

    return _make(out, inputs, backward, "conv2d")


def avg_pool2d(x, k: int) -> Tensor:
    """Non-overlapping k x k average pooling of a (C, H, W) tensor."""
    x = _wrap(x)
    C, H, W = x.shape
    if H % k or W % k:
        raise _shape_error("avg_pool2d", x.shape, (k, k))
    pooled = x.reshape(C, H // k, k, W // k, k).sum(axis=(2, 4))
    return mul(pooled, 1.0 / (k * k))


# ----------------------------------------------------------- initialization

def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# --------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update, in place; returns ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in block {name!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


# --------------------------------------------------------------- checkpoint

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict):
    """Named parameter blocks as ``.npz`` with a format version entry."""
    blocks = {k: np.asarray(v.data if isinstance(v, Tensor) else v) for k, v in params.items()}
    if "__version__" in blocks:
        raise ValueError("'__version__' is reserved")
    np.savez(path, __version__=np.array(CHECKPOINT_VERSION), **blocks)


def load_checkpoint(path) -> dict:
    with np.load(path) as f:
        version = int(f["__version__"]) if "__version__" in f else None
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        return {k: f[k].copy() for k in f.files if k != "__version__"}
