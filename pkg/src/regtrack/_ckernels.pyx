# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: bilinear crop, im2col/col2im and 2x2 max-pooling.

Signatures and numerics match ``_pykernels``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor
from libc.string cimport memcpy, memset

cnp.import_array()

ctypedef fused pixel_t:
    cnp.uint8_t
    float
    double

ctypedef fused real_t:
    float
    double


cdef inline void _axis_samples(double lo, double hi, Py_ssize_t n_out, Py_ssize_t n_src,
                               Py_ssize_t[::1] i0, Py_ssize_t[::1] i1,
                               double[::1] frac, cnp.uint8_t[::1] inside) noexcept nogil:
    cdef double step = (hi - lo) / n_out
    cdef double pos, u
    cdef Py_ssize_t k, a
    for k in range(n_out):
        pos = lo + (k + 0.5) * step
        inside[k] = 1 if (pos >= 0.0 and pos < n_src) else 0
        u = pos - 0.5
        if u < 0.0:
            u = 0.0
        elif u > n_src - 1.0:
            u = n_src - 1.0
        a = <Py_ssize_t>floor(u)
        i0[k] = a
        i1[k] = a + 1 if a + 1 < n_src else n_src - 1
        frac[k] = u - a


def crop_resize(pixel_t[:, :, ::1] src, double x0, double y0, double x1, double y1,
                Py_ssize_t out_h, Py_ssize_t out_w, pad):
    cdef Py_ssize_t src_h = src.shape[0], src_w = src.shape[1], channels = src.shape[2]
    cdef double[::1] padv = np.ascontiguousarray(pad, dtype=np.float64)[:channels].copy()
    cdef Py_ssize_t[::1] ix0 = np.empty(out_w, dtype=np.intp)
    cdef Py_ssize_t[::1] ix1 = np.empty(out_w, dtype=np.intp)
    cdef double[::1] fx = np.empty(out_w, dtype=np.float64)
    cdef cnp.uint8_t[::1] in_x = np.empty(out_w, dtype=np.uint8)
    cdef Py_ssize_t[::1] iy0 = np.empty(out_h, dtype=np.intp)
    cdef Py_ssize_t[::1] iy1 = np.empty(out_h, dtype=np.intp)
    cdef double[::1] fy = np.empty(out_h, dtype=np.float64)
    cdef cnp.uint8_t[::1] in_y = np.empty(out_h, dtype=np.uint8)
    out_arr = np.empty((out_h, out_w, channels), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t r, q, ch, ya, yb, xa, xb
    cdef double wy, wx, a, b, c, d

    with nogil:
        _axis_samples(x0, x1, out_w, src_w, ix0, ix1, fx, in_x)
        _axis_samples(y0, y1, out_h, src_h, iy0, iy1, fy, in_y)
        for r in range(out_h):
            ya = iy0[r]
            yb = iy1[r]
            wy = fy[r]
            for q in range(out_w):
                if not (in_y[r] and in_x[q]):
                    for ch in range(channels):
                        out[r, q, ch] = <float>padv[ch]
                    continue
                xa = ix0[q]
                xb = ix1[q]
                wx = fx[q]
                for ch in range(channels):
                    a = src[ya, xa, ch]
                    b = src[ya, xb, ch]
                    c = src[yb, xa, ch]
                    d = src[yb, xb, ch]
                    out[r, q, ch] = <float>((1.0 - wy) * ((1.0 - wx) * a + wx * b)
                                            + wy * ((1.0 - wx) * c + wx * d))
    return out_arr


cdef inline Py_ssize_t _first_valid(Py_ssize_t offset, Py_ssize_t stride) noexcept nogil:
    # smallest ox >= 0 with ox * stride + offset >= 0
    if offset >= 0:
        return 0
    return (-offset + stride - 1) // stride


cdef inline Py_ssize_t _end_valid(Py_ssize_t offset, Py_ssize_t stride, Py_ssize_t w,
                                  Py_ssize_t ow) noexcept nogil:
    # one past the largest ox with ox * stride + offset < w
    cdef Py_ssize_t last = w - 1 - offset
    if last < 0:
        return 0
    last = last // stride + 1
    return last if last < ow else ow


def im2col(real_t[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t c = x.shape[0], n = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if real_t is float else np.float64
    cols_arr = np.empty((c * kh * kw, n * oh * ow), dtype=dtype)
    cdef real_t[:, ::1] cols = cols_arr
    cdef Py_ssize_t ch, i, j, b, oy, ox, row, col, yy, lo, hi
    with nogil:
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    # output columns whose source x lies inside the image
                    lo = _first_valid(j - pad, stride)
                    hi = _end_valid(j - pad, stride, w, ow)
                    for b in range(n):
                        for oy in range(oh):
                            yy = oy * stride + i - pad
                            col = (b * oh + oy) * ow
                            if yy < 0 or yy >= h:
                                memset(&cols[row, col], 0, ow * sizeof(real_t))
                                continue
                            if lo > 0:
                                memset(&cols[row, col], 0, lo * sizeof(real_t))
                            if hi < ow:
                                memset(&cols[row, col + hi], 0, (ow - hi) * sizeof(real_t))
                            if hi <= lo:
                                continue
                            if stride == 1:
                                memcpy(&cols[row, col + lo], &x[ch, b, yy, lo + j - pad],
                                       (hi - lo) * sizeof(real_t))
                            else:
                                for ox in range(lo, hi):
                                    cols[row, col + ox] = x[ch, b, yy, ox * stride + j - pad]
    return cols_arr


def col2im(real_t[:, ::1] cols, Py_ssize_t c, Py_ssize_t n, Py_ssize_t h, Py_ssize_t w,
           Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if real_t is float else np.float64
    out_arr = np.zeros((c, n, h, w), dtype=dtype)
    cdef real_t[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ch, i, j, b, oy, ox, row, col, yy, lo, hi
    with nogil:
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    # output columns whose source x lies inside the image
                    lo = _first_valid(j - pad, stride)
                    hi = _end_valid(j - pad, stride, w, ow)
                    for b in range(n):
                        for oy in range(oh):
                            yy = oy * stride + i - pad
                            if yy < 0 or yy >= h:
                                continue
                            col = (b * oh + oy) * ow
                            for ox in range(lo, hi):
                                out[ch, b, yy, ox * stride + j - pad] += cols[row, col + ox]
    return out_arr


def maxpool2_forward(real_t[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t h2 = x.shape[2] // 2, w2 = x.shape[3] // 2
    dtype = np.float32 if real_t is float else np.float64
    out_arr = np.empty((n, c, h2, w2), dtype=dtype)
    arg_arr = np.empty((n, c, h2, w2), dtype=np.int8)
    cdef real_t[:, :, :, ::1] out = out_arr
    cdef cnp.int8_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ch, i, j, k
    cdef real_t best, v
    cdef cnp.int8_t besti
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(h2):
                    for j in range(w2):
                        best = x[b, ch, 2 * i, 2 * j]
                        besti = 0
                        # window order (0,0) (0,1) (1,0) (1,1); first max wins
                        for k in range(1, 4):
                            v = x[b, ch, 2 * i + k // 2, 2 * j + k % 2]
                            if v > best:
                                best = v
                                besti = <cnp.int8_t>k
                        out[b, ch, i, j] = best
                        arg[b, ch, i, j] = besti
    return out_arr, arg_arr


def maxpool2_backward(real_t[:, :, :, ::1] grad, cnp.int8_t[:, :, :, ::1] arg, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], h2 = grad.shape[2], w2 = grad.shape[3]
    dtype = np.float32 if real_t is float else np.float64
    out_arr = np.zeros((n, c, h, w), dtype=dtype)
    cdef real_t[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(h2):
                    for j in range(w2):
                        k = arg[b, ch, i, j]
                        out[b, ch, 2 * i + k // 2, 2 * j + k % 2] = grad[b, ch, i, j]
    return out_arr


def channel_mean(pixel_t[:, :, ::1] src):
    """Per-channel mean of an (H, W, C) image; integer images are summed exactly."""
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], c = src.shape[2]
    cdef Py_ssize_t y, x, k
    out = np.zeros(c, dtype=np.float64)
    cdef double[::1] o = out
    cdef cnp.uint64_t[::1] isum
    cdef double[::1] fsum
    if pixel_t is cnp.uint8_t:
        isum = np.zeros(c, dtype=np.uint64)
        with nogil:
            for y in range(h):
                for x in range(w):
                    for k in range(c):
                        isum[k] += src[y, x, k]
            for k in range(c):
                o[k] = <double>isum[k] / <double>(h * w)
    else:
        fsum = np.zeros(c, dtype=np.float64)
        with nogil:
            for y in range(h):
                for x in range(w):
                    for k in range(c):
                        fsum[k] += src[y, x, k]
            for k in range(c):
                o[k] = fsum[k] / <double>(h * w)
    return out
