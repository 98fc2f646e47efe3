"""Pure-numpy convolution kernels.

Same signatures as the compiled ``_ckernels`` module; used when the extension
is not built or ``HINAS_PURE_PYTHON=1`` is set.
"""
import numpy as np


def im2col(x, k, dil, pad, h_out, w_out):
    n, c = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, c, k, k, h_out, w_out), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i * dil:i * dil + h_out, j * dil:j * dil + w_out]
    return cols.reshape(n, c * k * k, h_out * w_out)


def col2im(cols, c, h, w, k, dil, pad, h_out, w_out):
    n = cols.shape[0]
    cols = cols.reshape(n, c, k, k, h_out, w_out)
    gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i * dil:i * dil + h_out, j * dil:j * dil + w_out] += cols[:, :, i, j]
    if pad:
        return np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + w])
    return gxp


def depthwise_forward(x, w, dil, pad, h_out, w_out):
    n, c = x.shape[:2]
    k = w.shape[-1]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((n, c, h_out, w_out), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += w[:, 0, i, j][None, :, None, None] * xp[:, :, i * dil:i * dil + h_out,
                                                          j * dil:j * dil + w_out]
    return out


def depthwise_backward(x, w, gout, dil, pad):
    n, c, h, wd = x.shape
    k = w.shape[-1]
    h_out, w_out = gout.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    gxp = np.zeros(xp.shape, dtype=x.dtype)
    gw = np.zeros(w.shape, dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            sl = (slice(None), slice(None), slice(i * dil, i * dil + h_out),
                  slice(j * dil, j * dil + w_out))
            gw[:, 0, i, j] = np.einsum("nchw,nchw->c", gout, xp[sl])
            gxp[sl] += w[:, 0, i, j][None, :, None, None] * gout
    if pad:
        gxp = np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + wd])
    return gxp, gw

