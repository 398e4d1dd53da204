"""Dense float64 tensors with reverse-mode automatic differentiation.

This is deliberately a small engine: it implements exactly the primitives
the sensing models need (batched matmul, softmax over the last axis,
layer normalization, GeLU, concatenation/stacking, an argmax-routed max
reduction, and the usual elementwise arithmetic) and nothing else.

Every array is numpy-backed, row-major and float64.  Forward operations
record their parents and a vector-Jacobian closure; ``backward`` on a
scalar linearizes the recorded graph topologically once, replays the
closures in reverse, accumulates gradients on every tensor that asked
for them, and then drops the record so the tensors can be reused.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense real tensor, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    # operator sugar; scalars and arrays are promoted to constant tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(other, scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose_last2(self):
        return transpose_last2(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        return backward(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, vjp):
    """Wrap an op result, recording the graph only when it can matter."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _accumulate(t, g):
    if t.grad is None:
        # views (broadcasts, moveaxis slices) are materialized before storing
        t.grad = g.copy() if g.base is not None else g
    else:
        t.grad = t.grad + g


def linearize(root):
    """Topologically ordered record of the operations below ``root``.

    Parents always precede the tensors they produced; the order is a pure
    function of the graph, so replaying it is deterministic.
    """
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            stack.append((p, False))
    return order


def backward(loss):
    """Populate ``grad`` on every requires_grad tensor below ``loss``.

    The loss must be scalar.  The computation record is released
    afterwards so the same leaf tensors can build a fresh graph.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    record = linearize(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(record):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if parent.requires_grad and g is not None:
                _accumulate(parent, _unbroadcast(g, parent.data.shape))
    # clear the record: leaves keep their grads, intermediates are freed
    for node in record:
        if node._vjp is not None:
            node._parents = ()
            node._vjp = None
            node.grad = None


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (g * b.data, g * a.data))


def scale(a, c):
    """Multiply by a python scalar (no second tensor in the record)."""
    a = _as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    """Batched matrix product with numpy broadcasting on leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")

    def vjp(g):
        return (np.matmul(g, np.swapaxes(b.data, -1, -2)),
                np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(np.matmul(a.data, b.data), (a, b), vjp)


def transpose_last2(a):
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("transpose_last2 needs at least 2 dimensions")
    return _make(np.swapaxes(a.data, -1, -2), (a,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def permute(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def reshape(a, *shape):
    a = _as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    shapes = {t.data.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack requires identical shapes, got {sorted(shapes)}")
    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.moveaxis(g, axis, 0)))


def reduce_max_axis0(a):
    """Elementwise max across the leading axis; gradient follows the argmax.

    Ties route to the lowest index, so the reduction is deterministic.
    """
    a = _as_tensor(a)
    if a.ndim < 1 or a.shape[0] < 1:
        raise ShapeError("reduce_max_axis0 needs a nonempty leading axis")
    idx = np.argmax(a.data, axis=0)

    def vjp(g):
        out = np.zeros_like(a.data)
        np.put_along_axis(out, idx[np.newaxis], g[np.newaxis], axis=0)
        return (out,)

    return _make(np.max(a.data, axis=0), (a,), vjp)


def reduce_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    shape = a.data.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def reduce_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    shape = a.data.shape
    count = a.data.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])
    inv = 1.0 / float(count)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * inv, shape),)

    return _make(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def log(a):
    a = _as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def clamp_min(a, lo):
    """Elementwise max(x, lo); gradient passes wherever x was not clamped."""
    a = _as_tensor(a)
    lo = float(lo)
    mask = a.data >= lo
    return _make(np.maximum(a.data, lo), (a,), lambda g: (g * mask,))


def gelu(a):
    """Gaussian-CDF GeLU, x * Phi(x)."""
    a = _as_tensor(a)
    phi_big = ndtr(a.data)

    def vjp(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
        return (g * (phi_big + a.data * pdf),)

    return _make(a.data * phi_big, (a,), vjp)


def softmax_lastdim(a):
    """Stable softmax along the last axis (max-subtracted)."""
    a = _as_tensor(a)
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def vjp(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (a,), vjp)


def layernorm(x, gain, bias, eps=1e-5):
    """Normalize each slice along the last axis, then apply gain and bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layernorm gain/bias must have shape ({d},)")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def vjp(g):
        dxhat = g * gain.data
        # per-slice backward of the normalization itself
        m1 = np.mean(dxhat, axis=-1, keepdims=True)
        m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        axes = tuple(range(g.ndim - 1))
        dgain = np.sum(g * xhat, axis=axes)
        dbias = np.sum(g, axis=axes)
        return (dx, dgain, dbias)

    return _make(xhat * gain.data + bias.data, (x, gain, bias), vjp)


def dense(x, w, b):
    """Affine layer x @ w + b (composition of recorded primitives)."""
    return add(matmul(x, w), b)
