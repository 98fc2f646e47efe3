# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels (im2col/col2im and depthwise conv).

Padding is folded into the index arithmetic so no padded copy is made.
Loop order is fixed, which keeps results deterministic.
"""
import numpy as np

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _lo(Py_ssize_t off, Py_ssize_t pad) nogil:
    # first output index whose source index (o + off - pad) is >= 0
    return pad - off if pad > off else 0


cdef inline Py_ssize_t _hi(Py_ssize_t off, Py_ssize_t pad, Py_ssize_t size,
                           Py_ssize_t n_out) nogil:
    # one past the last output index whose source index is < size
    cdef Py_ssize_t v = size + pad - off
    if v > n_out:
        return n_out
    return v if v > 0 else 0


def _dtype(real[:, :, :, ::1] x):
    if real is float:
        return np.float32
    return np.float64


def im2col(real[:, :, :, ::1] x, int k, int dil, int pad, int h_out, int w_out):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    out = np.zeros((n, c * k * k, h_out * w_out), dtype=_dtype(x))
    cdef real[:, :, ::1] o = out
    cdef Py_ssize_t b, ch, i, j, y, xx, row, y0, y1, x0, x1, oi, oj
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    oi = i * dil
                    y0 = _lo(oi, pad)
                    y1 = _hi(oi, pad, h, h_out)
                    for j in range(k):
                        oj = j * dil
                        x0 = _lo(oj, pad)
                        x1 = _hi(oj, pad, w, w_out)
                        row = (ch * k + i) * k + j
                        for y in range(y0, y1):
                            for xx in range(x0, x1):
                                o[b, row, y * w_out + xx] = x[b, ch, y + oi - pad, xx + oj - pad]
    return out


def col2im(real[:, :, ::1] cols, int c, int h, int w, int k, int dil, int pad,
           int h_out, int w_out):
    cdef Py_ssize_t n = cols.shape[0]
    if real is float:
        gx = np.zeros((n, c, h, w), dtype=np.float32)
    else:
        gx = np.zeros((n, c, h, w), dtype=np.float64)
    cdef real[:, :, :, ::1] g = gx
    cdef Py_ssize_t b, ch, i, j, y, xx, row, y0, y1, x0, x1, oi, oj
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    oi = i * dil
                    y0 = _lo(oi, pad)
                    y1 = _hi(oi, pad, h, h_out)
                    for j in range(k):
                        oj = j * dil
                        x0 = _lo(oj, pad)
                        x1 = _hi(oj, pad, w, w_out)
                        row = (ch * k + i) * k + j
                        for y in range(y0, y1):
                            for xx in range(x0, x1):
                                g[b, ch, y + oi - pad, xx + oj - pad] += cols[b, row, y * w_out + xx]
    return gx


def depthwise_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] wt, int dil, int pad,
                      int h_out, int w_out):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t k = wt.shape[3]
    out = np.zeros((n, c, h_out, w_out), dtype=_dtype(x))
    cdef real[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, i, j, y, xx, y0, y1, x0, x1, oi, oj
    cdef real wv
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    oi = i * dil
                    y0 = _lo(oi, pad)
                    y1 = _hi(oi, pad, h, h_out)
                    for j in range(k):
                        oj = j * dil
                        x0 = _lo(oj, pad)
                        x1 = _hi(oj, pad, w, w_out)
                        wv = wt[ch, 0, i, j]
                        for y in range(y0, y1):
                            for xx in range(x0, x1):
                                o[b, ch, y, xx] += wv * x[b, ch, y + oi - pad, xx + oj - pad]
    return out


def depthwise_backward(real[:, :, :, ::1] x, real[:, :, :, ::1] wt,
                       real[:, :, :, ::1] gout, int dil, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t k = wt.shape[3]
    cdef Py_ssize_t h_out = gout.shape[2], w_out = gout.shape[3]
    gx_arr = np.zeros((n, c, h, w), dtype=_dtype(x))
    # weight-gradient partial sums kept in double, one slot per (channel, tap)
    gw_acc = np.zeros((c, k * k), dtype=np.float64)
    cdef real[:, :, :, ::1] gx = gx_arr
    cdef double[:, ::1] gw = gw_acc
    cdef Py_ssize_t b, ch, i, j, y, xx, y0, y1, x0, x1, oi, oj
    cdef real wv, gv
    cdef double s
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    oi = i * dil
                    y0 = _lo(oi, pad)
                    y1 = _hi(oi, pad, h, h_out)
                    for j in range(k):
                        oj = j * dil
                        x0 = _lo(oj, pad)
                        x1 = _hi(oj, pad, w, w_out)
                        wv = wt[ch, 0, i, j]
                        s = 0.0
                        for y in range(y0, y1):
                            for xx in range(x0, x1):
                                gv = gout[b, ch, y, xx]
                                s += gv * x[b, ch, y + oi - pad, xx + oj - pad]
                                gx[b, ch, y + oi - pad, xx + oj - pad] += wv * gv
                        gw[ch, i * k + j] += s
    return gx_arr, gw_acc.reshape(c, 1, k, k).astype(_dtype(x))

