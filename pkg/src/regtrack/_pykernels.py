"""Pure-numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` argument for argument and are used whenever
the compiled extension is unavailable (or ``REGTRACK_KERNELS=python``).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _axis_samples(lo, hi, n_out, n_src):
    step = (hi - lo) / n_out
    pos = lo + (np.arange(n_out, dtype=np.float64) + 0.5) * step
    inside = (pos >= 0.0) & (pos < n_src)
    u = np.clip(pos - 0.5, 0.0, n_src - 1.0)
    i0 = np.floor(u).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_src - 1)
    frac = u - i0
    return i0, i1, frac, inside


def crop_resize(src, x0, y0, x1, y1, out_h, out_w, pad):
    """Bilinear resample of the window ``[x0, x1) x [y0, y1)`` of ``src``.

    ``src`` is ``(H, W, C)``. Output pixels whose sample point falls outside
    the source image take ``pad`` (one value per channel).
    """
    src_h, src_w, channels = src.shape
    ix0, ix1, fx, in_x = _axis_samples(x0, x1, out_w, src_w)
    iy0, iy1, fy, in_y = _axis_samples(y0, y1, out_h, src_h)

    fx = fx[None, :, None]
    fy = fy[:, None, None]
    rows0 = src[iy0]
    rows1 = src[iy1]
    a = rows0[:, ix0].astype(np.float64)
    b = rows0[:, ix1].astype(np.float64)
    c = rows1[:, ix0].astype(np.float64)
    d = rows1[:, ix1].astype(np.float64)
    out = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)

    outside = ~(in_y[:, None] & in_x[None, :])
    if outside.any():
        out[outside] = np.asarray(pad, dtype=np.float64)[:channels]
    return out.astype(np.float32)


def im2col(x, kh, kw, stride, pad):
    """Unfold ``x`` laid out ``(C, N, H, W)`` into ``(C*kh*kw, N*OH*OW)`` columns."""
    c, n, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, kh, kw, n, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = x[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(c * kh * kw, n * oh * ow)


def col2im(cols, c, n, h, w, kh, kw, stride, pad):
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(c, kh, kw, n, oh, ow)
    out = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def maxpool2_forward(x):
    # leading two axes are treated as batch dimensions
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    win = x[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    arg = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2_backward(grad, arg, h, w):
    n, c, h2, w2 = grad.shape
    onehot = np.zeros((n, c, h2, w2, 4), dtype=grad.dtype)
    np.put_along_axis(onehot, arg[..., None].astype(np.intp), grad[..., None], axis=-1)
    onehot = onehot.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    out = np.zeros((n, c, h, w), dtype=grad.dtype)
    out[:, :, : 2 * h2, : 2 * w2] = onehot.reshape(n, c, 2 * h2, 2 * w2)
    return out


def channel_mean(src):
    return src.reshape(-1, src.shape[-1]).mean(axis=0)
