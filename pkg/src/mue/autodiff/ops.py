"""Differentiable operations over :class:`Tensor`.

Elementwise ops broadcast numpy-style; their gradients are summed back to
the input shape. Spatial ops work on the trailing ``(H, W)`` axes with the
channel axis just before them, so both ``(C, H, W)`` and ``(N, C, H, W)``
layouts are accepted.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, get_dtype, make_result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return make_result(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient 0 at 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# reductions and shape ----------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (the channel axis for feature maps)."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(out, ts, bw, "concat")


def tile(v, h: int, w: int) -> Tensor:
    """Broadcast a vector ``(..., C)`` to ``h * w`` copies: ``(..., C, h, w)``."""
    v = as_tensor(v)
    if h <= 0 or w <= 0:
        raise ValueError(f"tile: spatial size must be positive, got ({h}, {w})")
    out = np.broadcast_to(v.data[..., None, None], v.shape + (h, w)).copy()
    return make_result(out, (v,), lambda g: (g.sum(axis=(-2, -1)),), "tile")


def global_avg_pool(a) -> Tensor:
    """Mean over the two trailing spatial axes."""
    a = as_tensor(a)
    if a.ndim < 3:
        raise ValueError(f"global_avg_pool: expected (..., C, H, W), got {a.shape}")
    hw = a.shape[-1] * a.shape[-2]

    def bw(g):
        return (np.broadcast_to(g[..., None, None] / hw, a.shape).copy(),)

    return make_result(a.data.mean(axis=(-2, -1)), (a,), bw, "global_avg_pool")


# linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return make_result(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped ``(out, in)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_result(out, parents, bw, "linear")


# convolution ------------------------------------------------------------------

def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, ``x`` (N, C, H, W) or (C, H, W), ``weight`` (O, C, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 3
    if x.ndim not in (3, 4) or weight.ndim != 4:
        raise ValueError(f"conv2d: expected input (N,C,H,W) and weight (O,C,kh,kw), got {x.shape} and {weight.shape}")
    if stride not in (1, 2) or padding < 0:
        raise ValueError(f"conv2d: unsupported stride={stride} padding={padding}")
    xd = x.data[None] if squeeze else x.data
    n, c, h, w = xd.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv2d: input channels {c} != weight channels {ci} (shapes {x.shape}, {weight.shape})")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ValueError(f"conv2d: kernel {(kh, kw)} larger than padded input {(hp, wp)}")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ValueError(f"conv2d: bias shape {bias.shape} != ({o},)")
        out = out + bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if squeeze:
        out = out[0]
    parents = [x, weight] + ([bias] if bias is not None else [])

    def bw(g):
        g4 = g[None] if squeeze else g
        gmat = g4.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        dw = (gmat.T @ cols).reshape(weight.shape)
        dcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        if squeeze:
            dx = dx[0]
        grads = [np.ascontiguousarray(dx), dw]
        if bias is not None:
            grads.append(gmat.sum(axis=0))
        return grads

    return make_result(np.ascontiguousarray(out), parents, bw, "conv2d")


# bilinear resampling ------------------------------------------------------------

def bilinear_matrix(n_in: int, n_out: int, scale: Optional[float] = None) -> np.ndarray:
    """1-D linear interpolation weights, half-pixel centres (align_corners=False).

    Output sample ``i`` reads input coordinate ``(i + 0.5) * scale - 0.5``,
    clamped to the valid range; ``scale`` defaults to ``n_in / n_out``.
    """
    scale = n_in / n_out if scale is None else scale
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0 if i0 < n_in - 1 else 0.0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    return m


def resize_bilinear(x, out_h: int, out_w: int, scale: Optional[tuple] = None) -> Tensor:
    x = as_tensor(x)
    if x.ndim < 2:
        raise ValueError(f"resize_bilinear: expected (..., H, W), got {x.shape}")
    h, w = x.shape[-2:]
    sh, sw = scale if scale is not None else (None, None)
    ah = bilinear_matrix(h, out_h, sh).astype(x.data.dtype)
    aw = bilinear_matrix(w, out_w, sw).astype(x.data.dtype)
    out = ah @ x.data @ aw.T

    def bw(g):
        return (ah.T @ g @ aw,)

    return make_result(out, (x,), bw, "resize_bilinear")


def downsample2x(x) -> Tensor:
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise ValueError(f"downsample2x: spatial size {(h, w)} too small")
    return resize_bilinear(x, h // 2, w // 2, scale=(2.0, 2.0))


def upsample2x(x) -> Tensor:
    x = as_tensor(x)
    h, w = x.shape[-2:]
    return resize_bilinear(x, 2 * h, 2 * w, scale=(0.5, 0.5))


# probabilities and losses ------------------------------------------------------------

def _log_softmax(z: np.ndarray, axis: int) -> np.ndarray:
    zmax = z.max(axis=axis, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), bw, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    out = _log_softmax(a.data, axis)
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (a,), bw, "log_softmax")


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(``logits``)."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ValueError("cross_entropy: target index out of range")
    n = logits.shape[0]
    logp = _log_softmax(logits.data, axis=1)
    rows = np.arange(n)
    loss = -logp[rows, targets].mean()

    def bw(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (d * (g / n),)

    return make_result(np.asarray(loss), (logits,), bw, "cross_entropy")


def bce_with_logits(logits, target) -> Tensor:
    """Mean elementwise binary cross-entropy of sigmoid(``logits``) against ``target``."""
    logits = as_tensor(logits)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=logits.data.dtype)
    if t.shape != logits.shape:
        raise ValueError(f"bce_with_logits: logits {logits.shape} vs target {t.shape}")
    z = logits.data
    loss = (np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))).mean()
    n = z.size

    def bw(g):
        return ((_sigmoid(z) - t) * (g / n),)

    return make_result(np.asarray(loss), (logits,), bw, "bce_with_logits")
