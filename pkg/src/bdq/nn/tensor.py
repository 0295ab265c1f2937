"""Reverse-mode differentiation on numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when any of its inputs require
gradients, remembers how it was produced.  Calling :meth:`Tensor.backward` on
a scalar walks the recorded graph in reverse topological order and
accumulates ``d loss / d node`` into each node's ``grad``.

Only the op set needed by the encoder and the small conv nets is provided.
Spatial layout is channels-first throughout: ``(N, C, *spatial)``.
"""
from __future__ import annotations

import contextlib
import itertools
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference / frozen encoders)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    # -- graph plumbing -------------------------------------------------
    @classmethod
    def from_op(cls, data, parents, backward):
        """Create the output of an op.

        ``backward(g)`` receives the upstream gradient and must return one
        gradient (or ``None``) per parent, in order.  Which parents receive
        gradients is fixed here, when the op runs: flipping ``requires_grad``
        afterwards does not change the recorded graph.
        """
        out = cls(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(p if p.requires_grad else None for p in parents)
            out._backward = backward
        return out

    def _accumulate(self, g):
        if g.shape != self.data.shape:
            g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p is not None and id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for p, g in zip(node._parents, grads):
                if g is not None and p is not None:
                    p._accumulate(g)
            # interior nodes are single-use; release their buffers
            node._backward = None
            node._parents = ()
            node.grad = None if node is not self else node.grad

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- conveniences ---------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __rtruediv__ = lambda a, b: div(b, a)
    __neg__ = lambda a: neg(a)
    __pow__ = lambda a, p: power(a, p)
    __matmul__ = lambda a, b: matmul(a, b)
    __getitem__ = lambda a, idx: getitem(a, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _binary_operands(a, b):
    # python scalars adopt the tensor's dtype so fp32 graphs stay fp32
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor) and isinstance(a, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _binary_operands(a, b)
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = _binary_operands(a, b)
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = _binary_operands(a, b)
    return Tensor.from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b):
    a, b = _binary_operands(a, b)
    out = a.data / b.data
    return Tensor.from_op(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def neg(a):
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,))


def power(a, p):
    p = float(p)
    return Tensor.from_op(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a):
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,))


def log(a):
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    out = _sigmoid(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    x = a.data
    out = np.logaddexp(0.0, x).astype(x.dtype, copy=False)
    return Tensor.from_op(out, (a,), lambda g: (g * _sigmoid(x),))


def relu(a):
    mask = a.data > 0
    return Tensor.from_op(a.data * mask, (a,), lambda g: (g * mask,))


def clip(a, lo, hi):
    mask = (a.data >= lo) & (a.data <= hi)
    return Tensor.from_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape),)

    return Tensor.from_op(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = math.prod(a.data.shape[ax] for ax in axes)
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return Tensor.from_op(out, (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx):
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g) if _needs_add_at(idx) else full.__setitem__(idx, g)
        return (full,)

    return Tensor.from_op(a.data[idx], (a,), backward)


def _needs_add_at(idx):
    # fancy integer indexing can repeat positions; slices cannot
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor.from_op(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def matmul(a, b):
    return Tensor.from_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def log_softmax(logits):
    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return Tensor.from_op(out, (logits,), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of ``-log softmax(logits)[label]`` (natural log)."""
    labels = np.asarray(labels)
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    lsm = log_softmax(logits)
    onehot = np.zeros_like(logits.data)
    onehot[np.arange(n), labels] = 1.0
    return -(lsm * Tensor(onehot)).sum() * (1.0 / n)


def entropy(logits):
    """Mean over the batch of the entropy of ``softmax(logits)``; at most ln K."""
    n = logits.data.shape[0]
    lsm = log_softmax(logits)
    p = exp(lsm)
    return -(p * lsm).sum() * (1.0 / n)


def mse(pred, target):
    diff = pred - as_tensor(target)
    return (diff * diff).mean()


# ---------------------------------------------------------------------------
# convolution family
# ---------------------------------------------------------------------------

def _im2col(xp, kernel, stride, out_shape):
    """``(C * K, N * out)`` column matrix; output pixels are the fast axis."""
    nsp = len(kernel)
    win = sliding_window_view(xp, kernel, axis=tuple(range(2, 2 + nsp)))
    if any(s != 1 for s in stride):
        win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    win = win[(slice(None), slice(None)) + tuple(slice(0, o) for o in out_shape)]
    # (N, C, *out, *K) -> (C, *K, N, *out)
    order = (1,) + tuple(range(2 + nsp, 2 + 2 * nsp)) + (0,) + tuple(range(2, 2 + nsp))
    n, c = xp.shape[:2]
    return np.ascontiguousarray(win.transpose(order)).reshape(
        c * math.prod(kernel), n * math.prod(out_shape))


def conv(x, w, b=None, stride=1, padding="same"):
    """N-d cross-correlation.  x: (N, C, *S); w: (O, C, *K); b: (O,).

    ``padding`` is ``"same"`` (zero pad k//2 per side, odd kernels) or
    ``"valid"``.
    """
    nsp = w.data.ndim - 2
    if x.data.ndim != nsp + 2:
        raise ValueError(f"input rank {x.data.ndim} does not match {nsp}d kernel")
    n, c = x.data.shape[:2]
    o, cw = w.data.shape[:2]
    if c != cw:
        raise ValueError(f"input has {c} channels, kernel expects {cw}")
    kernel = w.data.shape[2:]
    stride = (stride,) * nsp if isinstance(stride, int) else tuple(stride)
    if padding == "same":
        pads = tuple(k // 2 for k in kernel)
    elif padding == "valid":
        pads = (0,) * nsp
    else:
        raise ValueError(f"unknown padding {padding!r}")
    spatial = x.data.shape[2:]
    out_shape = tuple((s + 2 * p - k) // st + 1
                      for s, p, k, st in zip(spatial, pads, kernel, stride))
    if any(v <= 0 for v in out_shape):
        raise ValueError(f"kernel {kernel} too large for input {spatial}")

    xp = np.pad(x.data, ((0, 0), (0, 0)) + tuple((p, p) for p in pads)) if any(pads) else x.data
    cols = _im2col(xp, kernel, stride, out_shape)
    wmat = w.data.reshape(o, -1)
    y = wmat @ cols
    if b is not None:
        y += b.data[:, None]
    y = np.ascontiguousarray(np.moveaxis(y.reshape((o, n) + out_shape), 0, 1))

    def backward(g):
        g2 = np.ascontiguousarray(np.moveaxis(g, 1, 0)).reshape(o, -1)
        gw = (g2 @ cols.T).reshape(w.data.shape) if w.requires_grad else None
        gb = g2.sum(axis=1) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape((c,) + kernel + (n,) + out_shape)
            # scatter back in (C, N, *padded) layout, then swap to (N, C, ...)
            gxp = np.zeros((c, n) + xp.shape[2:], dtype=g.dtype)
            for off in itertools.product(*(range(k) for k in kernel)):
                sl = tuple(slice(st_, st_ + s * (m - 1) + 1, s)
                           for st_, s, m in zip(off, stride, out_shape))
                gxp[(slice(None), slice(None)) + sl] += dcols[(slice(None),) + off]
            gxp = gxp[(slice(None), slice(None)) + tuple(slice(p, p + s) for p, s in zip(pads, spatial))]
            gx = np.ascontiguousarray(np.moveaxis(gxp, 0, 1))
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor.from_op(y, parents, backward)


def max_pool(x, size):
    """Non-overlapping max pool over the spatial axes; trailing remainders are dropped."""
    nsp = x.data.ndim - 2
    size = (size,) * nsp if isinstance(size, int) else tuple(size)
    spatial = x.data.shape[2:]
    outs = tuple(s // k for s, k in zip(spatial, size))
    if any(o == 0 for o in outs):
        raise ValueError(f"pool {size} larger than input {spatial}")
    crop = x.data[(slice(None), slice(None)) + tuple(slice(0, o * k) for o, k in zip(outs, size))]
    n, c = x.data.shape[:2]
    split = crop.reshape((n, c) + tuple(v for pair in zip(outs, size) for v in pair))
    order = (0, 1) + tuple(2 + 2 * i for i in range(nsp)) + tuple(3 + 2 * i for i in range(nsp))
    blocks = split.transpose(order).reshape((n, c) + outs + (-1,))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape((n, c) + outs + size).transpose(np.argsort(order)).reshape(crop.shape)
        if crop.shape == x.data.shape:
            return (gb,)
        full = np.zeros_like(x.data)
        full[(slice(None), slice(None)) + tuple(slice(0, s) for s in crop.shape[2:])] = gb
        return (full,)

    return Tensor.from_op(out, (x,), backward)


def global_avg_pool(x):
    """(N, C, *S) -> (N, C)."""
    return mean(x, axis=tuple(range(2, x.data.ndim)))


def upsample(x, factors):
    """Nearest-neighbour upsampling of the spatial axes by integer factors."""
    nsp = x.data.ndim - 2
    factors = (factors,) * nsp if isinstance(factors, int) else tuple(factors)
    out = x.data
    for i, f in enumerate(factors):
        if f != 1:
            out = np.repeat(out, f, axis=2 + i)

    def backward(g):
        n, c = x.data.shape[:2]
        shape = (n, c) + tuple(v for s, f in zip(x.data.shape[2:], factors) for v in (s, f))
        return (g.reshape(shape).sum(axis=tuple(3 + 2 * i for i in range(nsp))),)

    return Tensor.from_op(out, (x,), backward)


def _reflect_pad_backward(gp, pad, axis):
    n = gp.shape[axis] - 2 * pad
    take = lambda a, b: np.take(gp, np.arange(a, b), axis=axis)
    g = take(pad, pad + n).copy()
    idx = [slice(None)] * g.ndim
    idx[axis] = slice(1, pad + 1)
    g[tuple(idx)] += np.flip(take(0, pad), axis=axis)
    idx[axis] = slice(n - 1 - pad, n - 1)
    g[tuple(idx)] += np.flip(take(n + pad, n + 2 * pad), axis=axis)
    return g


def filter2d(x, kernel, preserve_constants=False):
    """Correlate every (H, W) plane of ``x`` with one small odd kernel.

    Borders use reflect padding, so output size equals input size.  Both
    ``x`` and ``kernel`` receive gradients.  With ``preserve_constants`` the
    sum is formed as ``x + sum_ab k_ab (x_ab - x)``: identical for kernels
    summing to one, but constant planes come back bit-for-bit.
    """
    kh, kw = kernel.data.shape
    ph, pw = kh // 2, kw // 2
    h, w = x.data.shape[-2:]
    if h <= ph or w <= pw:
        raise ValueError(f"frame {h}x{w} too small for reflect padding of {kh}x{kw} kernel")
    lead = ((0, 0),) * (x.data.ndim - 2)
    xp = np.pad(x.data, lead + ((ph, ph), (pw, pw)), mode="reflect")
    k = kernel.data
    dtype = np.result_type(x.data, k)
    offsets = [(a, b) for a in range(kh) for b in range(kw)]

    def shifted(a, b):
        win = xp[..., a:a + h, b:b + w]
        return win - x.data if preserve_constants else win

    out = x.data.astype(dtype, copy=True) if preserve_constants else np.zeros(x.data.shape, dtype)
    for a, b in offsets:
        out += k[a, b] * shifted(a, b)

    def backward(g):
        gk = None
        if kernel.requires_grad:
            gk = np.empty_like(k)
            for a, b in offsets:
                gk[a, b] = np.vdot(g, shifted(a, b))
        gx = None
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for a, b in offsets:
                gxp[..., a:a + h, b:b + w] += k[a, b] * g
            gx = _reflect_pad_backward(gxp, ph, gxp.ndim - 2)
            gx = _reflect_pad_backward(gx, pw, gx.ndim - 1)
            if preserve_constants:
                gx += (1.0 - k.sum()) * g
        return gx, gk

    return Tensor.from_op(out, (x, kernel), backward)
