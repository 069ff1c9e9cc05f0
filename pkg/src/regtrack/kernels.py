"""Kernel dispatch: compiled Cython core when importable, numpy otherwise.

Set ``REGTRACK_KERNELS=python`` to force the numpy path. ``BACKEND`` names
the implementation actually in use.
"""

import os

import numpy as np

from . import _pykernels

_ext = None
if os.environ.get("REGTRACK_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _ext
    except ImportError:
        _ext = None

BACKEND = "cython" if _ext is not None else "python"


def _contig(a, dtype=None):
    return np.ascontiguousarray(a, dtype=dtype)


def crop_resize(src, x0, y0, x1, y1, out_h, out_w, pad):
    if _ext is None:
        return _pykernels.crop_resize(src, x0, y0, x1, y1, out_h, out_w, pad)
    if src.dtype not in (np.uint8, np.float32, np.float64):
        src = src.astype(np.float64)
    return _ext.crop_resize(_contig(src), float(x0), float(y0), float(x1), float(y1),
                            int(out_h), int(out_w), pad)


def im2col(x, kh, kw, stride=1, pad=0):
    if _ext is None:
        return _pykernels.im2col(x, kh, kw, stride, pad)
    return _ext.im2col(_contig(x), kh, kw, stride, pad)


def col2im(cols, c, n, h, w, kh, kw, stride=1, pad=0):
    if _ext is None:
        return _pykernels.col2im(cols, c, n, h, w, kh, kw, stride, pad)
    return _ext.col2im(_contig(cols), c, n, h, w, kh, kw, stride, pad)


def maxpool2_forward(x):
    if _ext is None:
        return _pykernels.maxpool2_forward(x)
    return _ext.maxpool2_forward(_contig(x))


def maxpool2_backward(grad, arg, h, w):
    if _ext is None:
        return _pykernels.maxpool2_backward(grad, arg, h, w)
    return _ext.maxpool2_backward(_contig(grad), _contig(arg), h, w)


def channel_mean(src):
    if _ext is None or src.dtype not in (np.uint8, np.float32, np.float64):
        return _pykernels.channel_mean(src)
    return _ext.channel_mean(_contig(src))
