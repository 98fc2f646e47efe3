"""Differentiable primitives.

Each function takes and returns :class:`Tensor` objects and records a
vector-Jacobian closure on the graph. Layout is always NCHW.
"""
from __future__ import annotations

import functools
from typing import Sequence

import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor, make_node


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    ad, bd = a.data, b.data

    def back(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_node(ad * bd, (a, b), back)


def div(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return make_node(out, (a, b), back)


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_node(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def log10(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise ValueError("log10 of non-positive value")
    inv = 1.0 / (xd * np.log(10.0))
    return make_node(np.log10(xd), (x,), lambda g: (g * inv.astype(xd.dtype),))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return make_node(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                     lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return make_node(np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                     lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def getitem(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.dtype
    fancy = any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def back(g):
        gx = np.zeros(shape, dtype=dtype)
        if fancy:
            np.add.at(gx, idx, g)
        else:
            gx[idx] = g
        return (gx,)

    return make_node(np.asarray(x.data[idx], order="C"), (x,), back)


# ---------------------------------------------------------------------------
# activations and normalisation


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    pos = xd >= 0
    out = np.where(pos, xd, xd * xd.dtype.type(slope))
    return make_node(out, (x,), lambda g: (np.where(pos, g, g * g.dtype.type(slope)),))


def softmax(v: Tensor, axis: int = -1) -> Tensor:
    vd = v.data
    if vd.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(vd - vd.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_node(s, (v,), back)


def batch_norm(x: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               weight: Tensor | None = None, bias: Tensor | None = None,
               training: bool = True, eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Per-channel batch normalisation over (N, H, W).

    In training mode the running buffers are updated in place with
    ``running = (1 - momentum) * running + momentum * batch_stat`` (unbiased
    variance for the running estimate).
    """
    n, c, h, w = x.shape
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ValueError(f"batch_norm expects {c} channels, state has {running_mean.shape[0]}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    xd = x.data
    dt = xd.dtype.type
    m = n * h * w
    if training:
        mu = xd.mean(axis=(0, 2, 3))
        xc = xd - mu[None, :, None, None]
        var = (xc * xc).mean(axis=(0, 2, 3))
        unbiased = var * (m / max(m - 1, 1))
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased
    else:
        mu = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)
        xc = xd - mu[None, :, None, None]
    inv = (1.0 / np.sqrt(var + dt(eps))).astype(xd.dtype)
    xhat = xc * inv[None, :, None, None]
    out = xhat
    if weight is not None:
        out = out * weight.data[None, :, None, None]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def back(g):
        gw = (g * xhat).sum(axis=(0, 2, 3)) if weight is not None else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        gxh = g * weight.data[None, :, None, None] if weight is not None else g
        if training:
            s1 = gxh.sum(axis=(0, 2, 3))
            s2 = (gxh * xhat).sum(axis=(0, 2, 3))
            gx = (gxh - s1[None, :, None, None] / m
                  - xhat * (s2[None, :, None, None] / m)) * inv[None, :, None, None]
        else:
            gx = gxh * inv[None, :, None, None]
        return gx, gw, gb

    parents = (x,
               weight if weight is not None else Tensor(np.zeros(0, xd.dtype)),
               bias if bias is not None else Tensor(np.zeros(0, xd.dtype)))
    return make_node(np.ascontiguousarray(out), parents, back)


# ---------------------------------------------------------------------------
# convolution


def same_padding(k: int, dilation: int = 1) -> int:
    if k % 2 == 0:
        raise ValueError(f"'same' padding needs an odd kernel, got {k}")
    return dilation * (k - 1) // 2


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int | str = 0, dilation: int = 1, groups: int = 1) -> Tensor:
    """2-D convolution (cross-correlation), stride 1 only."""
    if stride != 1:
        raise ValueError("only stride 1 is supported")
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, c_per, kh, kw = weight.shape
    if kh != kw:
        raise ValueError("square kernels only")
    k = kh
    if groups < 1 or c_in % groups or c_out % groups:
        raise ValueError(f"groups={groups} must divide C_in={c_in} and C_out={c_out}")
    if c_per != c_in // groups:
        raise ValueError(f"weight expects {c_per * groups} input channels, input has {c_in}")
    if padding == "same":
        padding = same_padding(k, dilation)
    pad = int(padding)
    h_out = h + 2 * pad - dilation * (k - 1)
    w_out = w + 2 * pad - dilation * (k - 1)
    if h_out <= 0 or w_out <= 0:
        raise ValueError("kernel larger than padded input")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} != ({c_out},)")

    dt = x.dtype
    xd = np.ascontiguousarray(x.data)
    wd = weight.data.astype(dt, copy=False)

    if groups == 1:
        out, back = _conv_dense(xd, wd, k, dilation, pad, h_out, w_out, x, weight)
    elif groups == c_in and c_out == c_in:
        out = kernels.depthwise_forward(xd, np.ascontiguousarray(wd), dilation, pad, h_out, w_out)

        def back(g):
            return kernels.depthwise_backward(xd, np.ascontiguousarray(wd),
                                              np.ascontiguousarray(g), dilation, pad)
    else:
        out, back = _conv_grouped(xd, wd, k, dilation, pad, h_out, w_out, groups)

    if bias is not None:
        out += bias.data.astype(dt, copy=False)[None, :, None, None]

    def backward_fn(g):
        gx, gw = back(g)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight, bias if bias is not None else Tensor(np.zeros(0, dt)))
    return make_node(out, parents, backward_fn)


def _conv_dense(xd, wd, k, dil, pad, h_out, w_out, x=None, weight=None):
    n, c_in, h, w = xd.shape
    c_out = wd.shape[0]
    wmat = wd.reshape(c_out, -1)
    pointwise = k == 1 and pad == 0

    def cols_of():
        if pointwise:
            return xd.reshape(n, c_in, h * w)
        return kernels.im2col(xd, k, dil, pad, h_out, w_out)

    out = np.matmul(wmat, cols_of()).reshape(n, c_out, h_out, w_out)

    def back(g):
        g2 = np.ascontiguousarray(g).reshape(n, c_out, h_out * w_out)
        gw = gx = None
        if weight is None or weight.requires_grad:
            cols = cols_of()  # recomputed rather than kept alive between passes
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        if x is not None and not x.requires_grad:
            return gx, gw
        gcols = np.matmul(wmat.T, g2)
        if pointwise:
            gx = gcols.reshape(n, c_in, h, w)
        else:
            gx = kernels.col2im(gcols, c_in, h, w, k, dil, pad, h_out, w_out)
        return gx, gw

    return out, back


def _conv_grouped(xd, wd, k, dil, pad, h_out, w_out, groups):
    n, c_in = xd.shape[:2]
    c_out = wd.shape[0]
    gi, go = c_in // groups, c_out // groups
    parts, backs = [], []
    for gidx in range(groups):
        xs = np.ascontiguousarray(xd[:, gidx * gi:(gidx + 1) * gi])
        ws = np.ascontiguousarray(wd[gidx * go:(gidx + 1) * go])
        o, b = _conv_dense(xs, ws, k, dil, pad, h_out, w_out)
        parts.append(o)
        backs.append(b)
    out = np.concatenate(parts, axis=1)

    def back(g):
        gx = np.empty_like(xd)
        gw = np.empty_like(wd)
        for gidx, b in enumerate(backs):
            gxs, gws = b(g[:, gidx * go:(gidx + 1) * go])
            gx[:, gidx * gi:(gidx + 1) * gi] = gxs
            gw[gidx * go:(gidx + 1) * go] = gws
        return gx, gw

    return out, back


def separable_conv(x: Tensor, depth_weight: Tensor, point_weight: Tensor, k: int | None = None,
                   dilation: int = 1) -> Tensor:
    """Depthwise ``k x k`` convolution (same padding) followed by a 1x1 convolution."""
    c = x.shape[1]
    kd = depth_weight.shape[-1]
    if k is not None and k != kd:
        raise ValueError(f"depthwise kernel is {kd}x{kd}, expected {k}")
    if depth_weight.shape[:2] != (c, 1):
        raise ValueError(f"depthwise weight must be ({c}, 1, k, k), got {depth_weight.shape}")
    y = conv2d(x, depth_weight, padding=same_padding(kd, dilation), dilation=dilation, groups=c)
    return conv2d(y, point_weight)


# ---------------------------------------------------------------------------
# structural ops


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ValueError("nothing to concatenate")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ValueError(f"spatial/batch mismatch: {ref} vs {t.shape}")
    if len(xs) == 1:
        return xs[0]
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return make_node(np.concatenate([t.data for t in xs], axis=1), tuple(xs), back)


def _shuffle(a: np.ndarray, s: int) -> np.ndarray:
    n, c, h, w = a.shape
    co = c // (s * s)
    return a.reshape(n, co, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * s, w * s)


def _unshuffle(a: np.ndarray, s: int) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, c * s * s, h // s, w // s)


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    if x.shape[1] % (s * s):
        raise ValueError(f"channels {x.shape[1]} not divisible by {s}^2")
    return make_node(np.ascontiguousarray(_shuffle(x.data, s)), (x,),
                     lambda g: (np.ascontiguousarray(_unshuffle(g, s)),))


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    if x.shape[2] % s or x.shape[3] % s:
        raise ValueError(f"spatial size {x.shape[2:]} not divisible by {s}")
    return make_node(np.ascontiguousarray(_unshuffle(x.data, s)), (x,),
                     lambda g: (np.ascontiguousarray(_shuffle(g, s)),))


def weighted_sum(weights: Tensor, xs: Sequence[Tensor | None]) -> Tensor:
    """``sum_k weights[k] * xs[k]``; ``None`` entries stand for all-zero maps."""
    if weights.shape != (len(xs),):
        raise ValueError(f"{weights.shape} weights for {len(xs)} terms")
    live = [(k, t) for k, t in enumerate(xs) if t is not None]
    if not live:
        raise ValueError("weighted_sum needs at least one non-zero term")
    wd = weights.data
    out = np.zeros(live[0][1].shape, dtype=live[0][1].dtype)
    for k, t in live:
        out += wd[k] * t.data

    def back(g):
        gw = np.zeros_like(wd)
        grads = []
        for k, t in live:
            gw[k] = np.vdot(g, t.data)
            grads.append(wd[k] * g if t.requires_grad else None)
        return (gw, *grads)

    return make_node(out, (weights, *[t for _, t in live]), back)


# ---------------------------------------------------------------------------
# bicubic resampling

BICUBIC_A = -0.5


def _cubic(t: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    t = np.abs(t)
    return np.where(t <= 1, ((a + 2) * t - (a + 3)) * t * t + 1,
                    np.where(t < 2, ((a * t - 5 * a) * t + 8 * a) * t - 4 * a, 0.0))


@functools.lru_cache(maxsize=64)
def resize_matrix(n_in: int, scale: int, direction: str) -> np.ndarray:
    """Dense 1-D bicubic resampling matrix (float64), half-pixel centres, edge clamping."""
    if scale not in (1, 2, 3, 4):
        raise ValueError(f"unsupported scale {scale}")
    if direction == "up":
        n_out = n_in * scale
        src = (np.arange(n_out) + 0.5) / scale - 0.5
    elif direction == "down":
        if n_in % scale:
            raise ValueError(f"size {n_in} not divisible by {scale}")
        n_out = n_in // scale
        src = (np.arange(n_out) + 0.5) * scale - 0.5
    else:
        raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
    base = np.floor(src).astype(int)
    frac = src - base
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for tap in range(-1, 3):
        idx = np.clip(base + tap, 0, n_in - 1)
        np.add.at(mat, (rows, idx), _cubic(frac - tap))
    mat.setflags(write=False)
    return mat


def bicubic_resize(x: Tensor, s: int, direction: str = "up") -> Tensor:
    if s not in (2, 3, 4):
        raise ValueError(f"bicubic scale must be 2, 3 or 4, got {s}")
    dt = x.dtype
    rh = resize_matrix(x.shape[2], s, direction).astype(dt)
    rw = resize_matrix(x.shape[3], s, direction).astype(dt)
    out = np.matmul(np.matmul(rh, x.data), rw.T)
    return make_node(np.ascontiguousarray(out), (x,),
                     lambda g: (np.matmul(np.matmul(rh.T, g), rw),))


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def back(g):
        gp = (2.0 / n) * g * diff
        return gp, -gp

    return make_node(np.asarray((diff * diff).mean(), dtype=pred.dtype), (pred, target), back)
