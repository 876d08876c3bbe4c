"""Minimal reverse-mode automatic differentiation over numpy arrays.

Everything trainable in this package (sparse U-Net, attention decoder, mask
head, learnable queries) is expressed through these primitives so that a
single backward pass yields gradients for every parameter group. float64
throughout: desk-scale problem sizes make precision cheaper than speed.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction (frozen click-sampling iterations, serving)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph.

    `data` is always a float64 ndarray. Gradients accumulate into `.grad`
    during `backward()`. Leaf tensors with requires_grad=True are the
    trainable parameters.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._backward_fn = None
        if _grad_enabled:
            self.requires_grad = requires_grad or any(
                p.requires_grad for p in _parents
            )
            self._parents = _parents
            self._backward = _backward
        else:
            self.requires_grad = False
            self._parents = ()

    @property
    def _backward(self):
        return self._backward_fn

    @_backward.setter
    def _backward(self, fn):
        # dropping the closure under no_grad frees the whole upstream graph
        if _grad_enabled:
            self._backward_fn = fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction helpers ------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor (scalar unless grad given)."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar output")
            grad = np.ones_like(self.data)
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen or not t.requires_grad:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for t in reversed(topo):
            if t._backward is not None:
                t._backward(t.grad)

    def zero_grad(self):
        self.grad = None

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, _parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        out._backward = bwd
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, _parents=(self,))
        out._backward = lambda g: self.requires_grad and self._accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, _parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        out._backward = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data / other.data, _parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / other.data**2, other.shape)
                )

        out._backward = bwd
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data @ other.data, _parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                ga = g @ np.swapaxes(other.data, -1, -2)
                self._accumulate(_unbroadcast(ga, self.shape))
            if other.requires_grad:
                gb = np.swapaxes(self.data, -1, -2) @ g
                other._accumulate(_unbroadcast(gb, other.shape))

        out._backward = bwd
        return out

    def __pow__(self, p):
        assert np.isscalar(p)
        out = Tensor(self.data**p, _parents=(self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * p * self.data ** (p - 1))

        out._backward = bwd
        return out

    # -- shape ops ------------------------------------------------------

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), _parents=(self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g.reshape(self.shape))

        out._backward = bwd
        return out

    def swapaxes(self, a, b):
        out = Tensor(np.swapaxes(self.data, a, b), _parents=(self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(np.swapaxes(g, a, b))

        out._backward = bwd
        return out

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,))

        def bwd(g):
            if not self.requires_grad:
                return
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        out._backward = bwd
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def max(self, axis):
        """Max along an axis; gradient routed to the first argmax (ties)."""
        idx = np.argmax(self.data, axis=axis)
        out = Tensor(np.max(self.data, axis=axis), _parents=(self,))

        def bwd(g):
            if not self.requires_grad:
                return
            full = np.zeros_like(self.data)
            grid = np.indices(out.shape)
            sel = list(grid)
            sel.insert(axis if axis >= 0 else self.ndim + axis, idx)
            full[tuple(sel)] = g
            self._accumulate(full)

        out._backward = bwd
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


def parameter(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


# -- nonlinearities -----------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), _parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0))

    out._backward = bwd
    return out


def exp(x: Tensor) -> Tensor:
    out = Tensor(np.exp(x.data), _parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * out.data)

    out._backward = bwd
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data), _parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g / x.data)

    out._backward = bwd
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s, _parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * s * (1.0 - s))

    out._backward = bwd
    return out


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax over the last axis, with optional additive mask.

    `mask` holds 0 for attendable entries and -inf for blocked ones;
    blocked entries get exactly zero probability and zero gradient. Uses
    max-subtraction for stability. Rows must have at least one attendable
    entry (callers repair fully-blocked rows beforehand).
    """
    z = x.data if mask is None else x.data + mask
    m = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, _parents=(x,))

    def bwd(g):
        if x.requires_grad:
            dot = (g * p).sum(axis=-1, keepdims=True)
            x._accumulate(p * (g - dot))

    out._backward = bwd
    return out


def log_softmax(x: Tensor) -> Tensor:
    m = np.max(x.data, axis=-1, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = Tensor(z - lse, _parents=(x,))
    p = np.exp(out.data)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g - p * g.sum(axis=-1, keepdims=True))

    out._backward = bwd
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift per channel."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, _parents=(x, gain, bias))
    n = x.data.shape[-1]

    def bwd(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gh = g * gain.data
            t1 = gh.sum(axis=-1, keepdims=True)
            t2 = (gh * xhat).sum(axis=-1, keepdims=True)
            x._accumulate(inv * (gh - t1 / n - xhat * t2 / n))

    out._backward = bwd
    return out


# -- gather / scatter (sparse convolution and pooling plumbing) ---------


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """out[i] = x[idx[i]]; idx == -1 yields a zero row (missing neighbor)."""
    idx = np.asarray(idx)
    valid = idx >= 0
    data = np.zeros((len(idx),) + x.data.shape[1:], dtype=np.float64)
    data[valid] = x.data[idx[valid]]
    out = Tensor(data, _parents=(x,))

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx[valid], g[valid])
            x._accumulate(gx)

    out._backward = bwd
    return out


def segment_sum(x: Tensor, seg: np.ndarray, num: int) -> Tensor:
    """out[s] = sum of rows i with seg[i] == s."""
    seg = np.asarray(seg)
    data = np.zeros((num,) + x.data.shape[1:], dtype=np.float64)
    np.add.at(data, seg, x.data)
    out = Tensor(data, _parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g[seg])

    out._backward = bwd
    return out


def segment_mean(x: Tensor, seg: np.ndarray, num: int) -> Tensor:
    seg = np.asarray(seg)
    counts = np.bincount(seg, minlength=num).astype(np.float64)
    counts[counts == 0] = 1.0
    s = segment_sum(x, seg, num)
    return s / constant(counts[:, None] if x.ndim > 1 else counts)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(data, _parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, gpart in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(gpart)

    out._backward = bwd
    return out


def take_columns(x: Tensor, cols: np.ndarray) -> Tensor:
    """out[:, j] = x[:, cols[j]]."""
    cols = np.asarray(cols)
    out = Tensor(x.data[:, cols], _parents=(x,))

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, (slice(None), cols), g)
            x._accumulate(gx)

    out._backward = bwd
    return out
