import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regtrack import _pykernels as py
from regtrack import kernels

ext = pytest.importorskip("regtrack._ckernels")


def _x(shape, dtype, seed=0):
    return np.random.default_rng(seed).standard_normal(shape).astype(dtype)


def test_backend_is_compiled_when_built():
    assert kernels.BACKEND == "cython"


def test_fallback_selected_by_environment():
    env = dict(os.environ, REGTRACK_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", "from regtrack import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@settings(max_examples=50, deadline=None)
@given(
    st.floats(-30, 60), st.floats(-30, 60), st.floats(2, 90), st.floats(2, 90),
    st.integers(1, 20), st.sampled_from([np.uint8, np.float32, np.float64]),
)
def test_crop_resize_parity(x0, y0, w, h, out, dtype):
    src = (np.random.default_rng(1).random((37, 53, 3)) * 255).astype(dtype)
    pad = np.array([1.0, 2.0, 3.0])
    a = ext.crop_resize(src, x0, y0, x0 + w, y0 + h, out, out + 1, pad)
    b = py.crop_resize(src, x0, y0, x0 + w, y0 + h, out, out + 1, pad)
    assert a.dtype == b.dtype and a.shape == b.shape
    np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-3)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 0), (1, 1, 0), (5, 1, 2)])
def test_im2col_col2im_parity(dtype, k, stride, pad):
    x = _x((3, 2, 9, 11), dtype)
    a, b = ext.im2col(x, k, k, stride, pad), py.im2col(x, k, k, stride, pad)
    np.testing.assert_array_equal(a, b)
    g = _x(a.shape, dtype, 2)
    np.testing.assert_allclose(ext.col2im(g, 3, 2, 9, 11, k, k, stride, pad),
                               py.col2im(g, 3, 2, 9, 11, k, k, stride, pad), rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("h,w", [(8, 8), (7, 9)])
def test_maxpool_parity(dtype, h, w):
    x = _x((4, 2, h, w), dtype)
    (ya, aa), (yb, ab) = ext.maxpool2_forward(x), py.maxpool2_forward(x)
    np.testing.assert_array_equal(ya, yb)
    np.testing.assert_array_equal(aa, ab)
    g = _x(ya.shape, dtype, 3)
    np.testing.assert_array_equal(ext.maxpool2_backward(g, aa, h, w), py.maxpool2_backward(g, ab, h, w))


@pytest.mark.parametrize("dtype", [np.uint8, np.float32, np.float64])
def test_channel_mean_parity(dtype):
    img = (np.random.default_rng(4).random((31, 17, 3)) * 255).astype(dtype)
    a, b = ext.channel_mean(img), py.channel_mean(img)
    if dtype is np.uint8:
        np.testing.assert_array_equal(a, b)
    else:
        np.testing.assert_allclose(a, b, rtol=1e-6)


def test_dispatch_coerces_layout():
    x = np.asfortranarray(_x((2, 3, 6, 6), np.float64).reshape(2, 3, 6, 6))
    np.testing.assert_array_equal(kernels.im2col(x, 3, 3, 1, 1), py.im2col(x, 3, 3, 1, 1))
    img = (np.random.default_rng(5).random((10, 12, 3)) * 255).astype(np.int16)
    np.testing.assert_allclose(kernels.channel_mean(img), img.reshape(-1, 3).mean(axis=0))
