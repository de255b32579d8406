"""Tape-based reverse-mode differentiation over numpy arrays.

Operations executed while a :class:`Tape` is active, and that touch at least
one tensor with ``requires_grad``, are appended to the tape in execution
order. :meth:`Tape.backward` replays them in exact reverse order. Outside a
tape the same functions are plain forward computations.

A tape belongs to one thread of execution; do not share it.
"""

import numpy as np

from ..exceptions import ShapeError
from .kernels import bmm_kernel, matmul_kernel
from .linalg import softmax, softmax_cross_entropy as _sce

_ACTIVE = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive operations."""

    def __init__(self):
        self.ops = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)

    def record(self, out, inputs, backward):
        self.ops.append((out, inputs, backward))

    def backward(self, loss):
        """Accumulate d loss / d leaf into ``.grad`` of every leaf tensor."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        acc = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for out, inputs, fn in reversed(self.ops):
            g = acc.pop(id(out), None)
            if g is None:
                continue
            for x, gx in zip(inputs, fn(g)):
                if gx is None or not x.requires_grad:
                    continue
                buf = acc.get(id(x))
                if buf is None:
                    buf = np.zeros(x.data.shape)
                    acc[id(x)] = buf
                    leaves[id(x)] = x
                buf += gx
        for key, buf in acc.items():
            if key in leaves:
                leaves[key].grad = buf


def _tape_for(*inputs):
    if _ACTIVE and any(isinstance(x, Tensor) and x.requires_grad for x in inputs):
        return _ACTIVE[-1]
    return None


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data, inputs, backward):
    tape = _tape_for(*inputs)
    out = Tensor(data, requires_grad=tape is not None)
    if tape is not None:
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _mm(a, b):
    return matmul_kernel(np.ascontiguousarray(a), np.ascontiguousarray(b))


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, s):
    return _emit(a.data * s, (a,), lambda g: (g * s,))


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _emit(_mm(ad, bd), (a, b), lambda g: (_mm(g, bd.T), _mm(ad.T, g)))


def linear(x, w, b=None):
    """``x @ w + b`` over the last axis of ``x``."""
    lead = x.shape[:-1]
    x2 = np.ascontiguousarray(x.data.reshape(-1, x.shape[-1]))
    wd = w.data
    out = _mm(x2, wd)
    if b is not None:
        out += b.data
    out = out.reshape(lead + (wd.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = _mm(g2, wd.T).reshape(x.shape)
        gw = _mm(x2.T, g2)
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return _emit(out, inputs, backward)


def embedding(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    td = table.data

    def backward(g):
        gt = np.zeros(td.shape)
        np.add.at(gt, ids.ravel(), g.reshape(-1, td.shape[1]))
        return (gt,)

    return _emit(td[ids], (table,), backward)


def reshape(x, shape):
    old = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes):
    inv = np.argsort(axes)
    return _emit(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(xs, axis):
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _emit(np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def take_rows(x, rows):
    """Select ``x[:, rows]`` along axis 1 (sequence axis)."""
    rows = np.asarray(rows, dtype=np.int64)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        gx[:, rows] = g
        return (gx,)

    return _emit(x.data[:, rows], (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    n = xd.shape[-1]

    def backward(g):
        red = tuple(range(g.ndim - 1))
        dg = (g * xhat).sum(axis=red)
        db = g.sum(axis=red)
        dxhat = g * gd
        dx = (inv / n) * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                          - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return dx, dg, db

    return _emit(xhat * gd + bias.data, (x, gain, bias), backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    """Tanh approximation of GELU."""
    xd = x.data
    u = _GELU_C * (xd + 0.044715 * xd * xd * xd)
    t = np.tanh(u)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return _emit(0.5 * xd * (1.0 + t), (x,), backward)


def dropout(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _emit(x.data * keep, (x,), lambda g: (g * keep,))


def attention(q, k, v, causal=False, key_mask=None):
    """Scaled dot-product attention over ``(B, H, T, dh)`` tensors.

    ``causal`` restricts query ``t`` to keys ``<= t``. ``key_mask`` is a
    ``(B, S)`` boolean array of valid keys.
    """
    b, h, t, dh = q.shape
    s = k.shape[2]
    sc = 1.0 / np.sqrt(dh)
    qd = q.data.reshape(b * h, t, dh)
    kd = k.data.reshape(b * h, s, dh)
    vd = v.data.reshape(b * h, s, dh)
    kt = np.ascontiguousarray(kd.transpose(0, 2, 1))
    scores = bmm_kernel(np.ascontiguousarray(qd), kt) * sc
    allowed = np.ones((b, 1, t, s), dtype=bool)
    if causal:
        allowed = allowed & np.tril(np.ones((t, s), dtype=bool))
    if key_mask is not None:
        allowed = allowed & np.asarray(key_mask, dtype=bool)[:, None, None, :]
    allowed = np.broadcast_to(allowed, (b, h, t, s)).reshape(b * h, t, s)
    scores = np.where(allowed, scores, -np.inf)
    p = softmax(scores, axis=-1)
    out = bmm_kernel(p, np.ascontiguousarray(vd)).reshape(b, h, t, dh)

    def backward(g):
        g3 = np.ascontiguousarray(g.reshape(b * h, t, dh))
        dp = bmm_kernel(g3, np.ascontiguousarray(vd.transpose(0, 2, 1)))
        dv = bmm_kernel(np.ascontiguousarray(p.transpose(0, 2, 1)), g3)
        ds = p * (dp - np.sum(dp * p, axis=-1, keepdims=True)) * sc
        dq = bmm_kernel(ds, np.ascontiguousarray(kd))
        dk = bmm_kernel(np.ascontiguousarray(ds.transpose(0, 2, 1)), np.ascontiguousarray(qd))
        return (dq.reshape(q.shape), dk.reshape(k.shape), dv.reshape(v.shape))

    return _emit(out, (q, k, v), backward)


def cross_entropy(logits, targets, weights=None):
    """Scalar mean NLL over rows of ``logits`` (any leading shape)."""
    v = logits.shape[-1]
    flat = logits.data.reshape(-1, v)
    t = np.asarray(targets).reshape(-1)
    w = None if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    loss, grad = _sce(flat, t, w)
    shape = logits.shape
    return _emit(np.asarray(loss), (logits,), lambda g: (grad.reshape(shape) * g,))


def total(x):
    return _emit(np.asarray(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))
