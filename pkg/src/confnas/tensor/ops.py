"""Differentiable primitives.

Every primitive computes its forward value with numpy and returns a node whose
backward closure maps the output gradient to one gradient per input (``None``
for inputs that are constants). Broadcasting follows numpy; gradients are
summed back to the input shape.
"""
from __future__ import annotations

import numpy as np

from .core import Tensor, as_tensor, make_node


class ShapeError(ValueError):
    pass


def _shape_error(op: str, a, b) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, a.shape, b.shape) from None


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)
    return make_node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)
    return make_node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)
    return make_node(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)
    return make_node(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return make_node(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_node(np.log(ad), (a,), lambda g: (g / ad,), "log")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return make_node(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return make_node(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def swish(a) -> Tensor:
    """x * sigmoid(x)."""
    a = as_tensor(a)
    x = a.data
    s = _sigmoid(x)
    return make_node(x * s, (a,), lambda g: (g * (s + x * s * (1.0 - s)),), "swish")


def glu(a, axis: int = -1) -> Tensor:
    """Gated linear unit: first half * sigmoid(second half) along ``axis``."""
    a = as_tensor(a)
    n = a.shape[axis]
    if n % 2:
        raise ShapeError(f"glu: axis {axis} has odd size {n} in shape {a.shape}")
    x1, x2 = np.split(a.data, 2, axis=axis)
    s = _sigmoid(x2)

    def bw(g):
        return (np.concatenate([g * s, g * x1 * s * (1.0 - s)], axis=axis),)
    return make_node(x1 * s, (a,), bw, "glu")


# ----------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return make_node(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ----------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb
    return make_node(ad @ bd, (a, b), bw, "matmul")


def linear(x, w, b=None) -> Tensor:
    """x @ w (+ b)."""
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", src, shape) from None
    return make_node(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise _shape_error("transpose", a.shape, axes)
    inv = tuple(np.argsort(axes))
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    idx = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int, type(None))) or i is Ellipsis for i in idx)

    def bw(g):
        out = np.zeros(shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)
    return make_node(np.array(a.data[index]), (a,), bw, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise _shape_error("concat", ts[0].shape, ts[-1].shape) from None
    splits = np.cumsum(sizes)[:-1]
    return make_node(out, ts, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def take(a, idx: np.ndarray, axis: int) -> Tensor:
    """Gather ``a`` along ``axis`` with an integer index array (any shape)."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    shape = a.shape
    ax = axis % a.ndim
    out = np.take(a.data, idx, axis=ax)

    def bw(g):
        # move the gathered index dims to the front, then scatter-add
        gi = np.moveaxis(g, tuple(range(ax, ax + idx.ndim)), tuple(range(idx.ndim)))
        full = np.zeros((shape[ax],) + shape[:ax] + shape[ax + 1:])
        np.add.at(full, idx, gi)
        return (np.moveaxis(full, 0, ax),)
    return make_node(out, (a,), bw, "take")


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise _shape_error("embedding", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids out of range for table {table.shape}")
    return take(table, ids, axis=0)


def masked_fill(a, mask: np.ndarray, value: float) -> Tensor:
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    try:
        mb = np.broadcast_to(mask, a.shape)
    except ValueError:
        raise _shape_error("masked_fill", a.shape, mask.shape) from None
    out = np.where(mb, value, a.data)
    keep = ~mb
    return make_node(out, (a,), lambda g: (g * keep,), "masked_fill")


def dropout(a, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    a = as_tensor(a)
    if rate <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout with rate > 0 needs an explicit generator")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return make_node(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# ----------------------------------------------------------------- normalisation

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)
    return make_node(s, (a,), bw, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = x - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)
    return make_node(out, (a,), bw, "log_softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise _shape_error("layer_norm", x.shape, gamma.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        gg = (g * xhat).reshape(-1, d).sum(axis=0) if gamma.requires_grad else None
        gb = g.reshape(-1, d).sum(axis=0) if beta.requires_grad else None
        return gx, gg, gb
    return make_node(xhat * gd + beta.data, (x, gamma, beta), bw, "layer_norm")


# ----------------------------------------------------------------- convolution

def depthwise_conv1d(x, w) -> Tensor:
    """Per-channel convolution over time with zero 'same' padding.

    ``x`` is (..., T, C), ``w`` is (K, C) with K odd. This is a true
    convolution (kernel flipped), so out[t] = sum_k x[t + p - k] * w[k].
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.ndim < 2 or x.shape[-1] != w.shape[1] or w.shape[0] % 2 == 0:
        raise _shape_error("depthwise_conv1d", x.shape, w.shape)
    k = w.shape[0]
    p = (k - 1) // 2
    t = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(p, p), (0, 0)]
    xp = np.pad(x.data, pad)
    wf = w.data[::-1]
    out = np.zeros_like(x.data)
    for j in range(k):
        out += xp[..., j:j + t, :] * wf[j]

    def bw(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j:j + t, :] += g * wf[j]
            gx = gxp[..., p:p + t, :]
        if w.requires_grad:
            gwf = np.stack([(g * xp[..., j:j + t, :]).reshape(-1, g.shape[-1]).sum(axis=0)
                            for j in range(k)])
            gw = gwf[::-1].copy()
        return gx, gw
    return make_node(out, (x, w), bw, "depthwise_conv1d")


def patches2d(x, k: int = 3, stride: int = 2, pad_time: tuple[int, int] = (0, 1)) -> Tensor:
    """Extract k x k patches from (B, T, F, C) with a stride on both axes.

    Time is padded by ``pad_time`` zeros, frequency is unpadded. Output is
    (B, T', F', k*k*C) ordered (dt, df, c); a matmul with a (k*k*C, C_out)
    weight then realises a 2-D convolution.
    """
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[2] < k:
        raise _shape_error("patches2d", x.shape, (k, k))
    b, t, f, c = x.shape
    xp = np.pad(x.data, [(0, 0), pad_time, (0, 0), (0, 0)])
    tp = xp.shape[1]
    to = (tp - k) // stride + 1
    fo = (f - k) // stride + 1
    if to < 1:
        raise _shape_error("patches2d", x.shape, (k, k))
    cols = np.empty((b, to, fo, k, k, c))
    for dt in range(k):
        for df in range(k):
            cols[:, :, :, dt, df, :] = xp[:, dt:dt + stride * to:stride,
                                          df:df + stride * fo:stride, :]

    def bw(g):
        g = g.reshape(b, to, fo, k, k, c)
        gxp = np.zeros_like(xp)
        for dt in range(k):
            for df in range(k):
                gxp[:, dt:dt + stride * to:stride, df:df + stride * fo:stride, :] += g[:, :, :, dt, df, :]
        return (gxp[:, pad_time[0]:pad_time[0] + t],)
    return make_node(cols.reshape(b, to, fo, k * k * c), (x,), bw, "patches2d")


# ----------------------------------------------------------------- dispatch

PRIMITIVES = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg, "scale": scale,
    "exp": exp, "log": log, "sigmoid": sigmoid, "tanh": tanh, "relu": relu,
    "swish": swish, "glu": glu, "sum": sum, "mean": mean, "matmul": matmul,
    "reshape": reshape, "transpose": transpose, "getitem": getitem,
    "concat": concat, "take": take, "embedding": embedding,
    "masked_fill": masked_fill, "dropout": dropout, "softmax": softmax,
    "log_softmax": log_softmax, "layer_norm": layer_norm,
    "depthwise_conv1d": depthwise_conv1d, "patches2d": patches2d,
}


def forward(op_kind: str, *inputs, **attrs) -> Tensor:
    """Apply the primitive named ``op_kind``."""
    try:
        fn = PRIMITIVES[op_kind]
    except KeyError:
        raise ValueError(f"unknown primitive {op_kind!r}") from None
    return fn(*inputs, **attrs)
