"""Dense tensors with a taped reverse-mode autodiff.

Every op computes its forward value eagerly with numpy and records a closure
that maps the output gradient onto its inputs.  ``backward`` walks the tape in
reverse topological order.
"""
from __future__ import annotations

import os

import numpy as np

_DEBUG = os.environ.get("SAB_DEBUG", "") not in ("", "0")


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation is called outside its contract."""


class NonFiniteError(FloatingPointError):
    pass


def set_debug(flag: bool) -> None:
    """Toggle NaN/Inf assertions after every forward op."""
    global _DEBUG
    _DEBUG = bool(flag)


def debug_enabled() -> bool:
    return _DEBUG


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    # -- introspection -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or np.float64))


def _make(data, parents, backward_fn, op):
    """Wrap a forward result and hook it into the tape when any parent needs grad."""
    if _DEBUG and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root`` that take part in differentiation, inputs first."""
    order, seen = [], set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every grad-requiring tensor reachable from ``loss``.

    Gradients accumulate into existing buffers, so callers zero them between
    steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _accumulate(node, g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                pg = _unbroadcast(pg, parent.data.shape)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)), "div")


# Smallest |input| seen by relu while a kink watch is active (None = inactive).
RELU_MARGIN = None


def watch_relu_kinks():
    """Start recording how close relu inputs come to the kink at zero."""
    global RELU_MARGIN
    RELU_MARGIN = np.inf


def relu_margin():
    """Stop watching; return the smallest |input| relu saw since ``watch_relu_kinks``."""
    global RELU_MARGIN
    margin, RELU_MARGIN = RELU_MARGIN, None
    return margin


def relu(x):
    global RELU_MARGIN
    if RELU_MARGIN is not None and x.data.size:
        RELU_MARGIN = min(RELU_MARGIN, float(np.abs(x.data).min()))
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x):
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sqrt(x):
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def square(x):
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


# -- reductions and shape ----------------------------------------------------

def tsum(x, axis=None, keepdims=False):
    shape = x.data.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw, "sum")


sum = tsum  # noqa: A001 - mirrors numpy naming


def mean(x, axis=None, keepdims=False):
    if axis is None:
        n = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.data.shape[a] for a in axes]))
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(x, shape):
    old = x.data.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.data.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swap_last(x):
    """Transpose the two trailing axes, leaving batch axes alone."""
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return transpose(x, axes)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def stack(tensors, axis=0):
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis=axis)


def take_rows(table, idx):
    """Gather ``table[idx]`` along axis 0; repeated indices accumulate."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = table.data.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _make(table.data[idx], (table,), bw, "take_rows")


def slice_axis(x, axis, start, stop):
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = x.data.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[idx] = g
        return (out,)

    return _make(x.data[idx], (x,), bw, "slice")


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    """Matrix product; leading axes are treated as batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g)

    return _make(ad @ bd, (a, b), bw, "matmul")


def _require_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: input contains NaN or Inf")


def inverse(x):
    _require_finite(x.data, "inverse")
    inv = np.linalg.inv(x.data)

    def bw(g):
        inv_t = np.swapaxes(inv, -1, -2)
        return (-(inv_t @ g @ inv_t),)

    return _make(inv, (x,), bw, "inverse")


# Incremented each time a symmetric eigenvalue is lifted to the floor.
EIGEN_CLAMP_COUNT = 0


def trace_log_sym(x, floor):
    """``trace(log(x))`` for symmetric matrices via eigendecomposition.

    The input is symmetrized and eigenvalues below ``floor`` are raised to it;
    clamped directions receive no gradient.  Batched over leading axes.
    """
    global EIGEN_CLAMP_COUNT
    sym = 0.5 * (x.data + np.swapaxes(x.data, -1, -2))
    _require_finite(sym, "trace_log_sym")
    w, v = np.linalg.eigh(sym)
    low = w < floor
    EIGEN_CLAMP_COUNT += int(low.sum())
    wc = np.where(low, floor, w)
    out = np.log(wc).sum(axis=-1)

    def bw(g):
        scale = np.where(low, 0.0, 1.0 / wc)
        grad = (v * scale[..., None, :]) @ np.swapaxes(v, -1, -2)
        grad = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        return (grad * np.asarray(g)[..., None, None],)

    return _make(out, (x,), bw, "trace_log_sym")


# -- softmax family ----------------------------------------------------------

def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def log_softmax(x, axis=-1):
    m = x.data.max(axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    prob = np.exp(out)

    def bw(g):
        return (g - prob * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


# -- gradient oracle ---------------------------------------------------------

def finite_difference_gradient(f, x, h=1e-5):
    """Central-difference estimate of d f / d x for a scalar-valued ``f``.

    ``x`` may be a Tensor or an array; ``f`` receives an array of the same
    shape and must return something convertible to float.
    """
    if h <= 0:
        raise ContractError("step h must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64, copy=True)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(_scalar(f(base)))
        flat[i] = old - h
        fm = float(_scalar(f(base)))
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def _scalar(v):
    if isinstance(v, Tensor):
        return v.data.reshape(-1)[0] if v.data.size == 1 else np.sum(v.data)
    return v


def relative_error(analytic, numeric, floor=1e-6):
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries whose true gradient is ~0 from dividing two
    rounding residues by each other.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise DimensionError(f"gradient shapes differ: {a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
