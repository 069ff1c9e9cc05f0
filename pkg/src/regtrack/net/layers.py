"""Layers with explicit forward/backward.

Convolutional activations use a channel-major ``(C, N, H, W)`` layout so
each convolution is a single GEMM against im2col columns.
"""

from __future__ import annotations

import math

import numpy as np

from .. import kernels


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, train=False, keep=False):
        raise NotImplementedError

    def backward(self, grad, need_input_grad=True):
        raise NotImplementedError

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)


def unit_uniform(rng, shape, dtype, gain=1.0):
    """Uniform weights with variance ``gain**2``."""
    bound = gain * math.sqrt(3.0)
    return rng.uniform(-bound, bound, shape).astype(dtype)


def he_scale(fan_in: int) -> float:
    return math.sqrt(2.0 / fan_in)


class Conv2D(Layer):
    def __init__(self, in_ch, out_ch, kernel=3, stride=1, pad=None, rng=None, dtype=np.float32):
        super().__init__()
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.pad = kernel // 2 if pad is None else pad
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * kernel * kernel
        # stored weights have unit variance; the fan-in scale is applied in
        # forward so every layer sees a comparable effective step size
        self.scale = np.dtype(dtype).type(he_scale(fan_in))
        self.params["W"] = unit_uniform(rng, (out_ch, fan_in), dtype)
        self.params["b"] = np.zeros(out_ch, dtype=dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._cols = None
        self._in_shape = None

    def out_hw(self, h, w):
        k, s, p = self.kernel, self.stride, self.pad
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x, train=False, keep=False):
        c, n, h, w = x.shape
        oh, ow = self.out_hw(h, w)
        cols = kernels.im2col(x, self.kernel, self.kernel, self.stride, self.pad)
        out = self.params["W"] @ cols
        out *= self.scale
        out += self.params["b"][:, None]
        if keep:
            self._cols, self._in_shape = cols, x.shape
        return out.reshape(self.out_ch, n, oh, ow)

    def backward(self, grad, need_input_grad=True):
        if self._cols is None:
            raise RuntimeError("Conv2D.backward called without a retained forward pass")
        g = grad.reshape(self.out_ch, -1)
        self.grads["W"] += (g @ self._cols.T) * self.scale
        self.grads["b"] += g.sum(axis=1)
        if not need_input_grad:
            return None
        c, n, h, w = self._in_shape
        dcols = self.params["W"].T @ (g * self.scale)
        return kernels.col2im(dcols, c, n, h, w, self.kernel, self.kernel, self.stride, self.pad)


class ReLU(Layer):
    def forward(self, x, train=False, keep=False):
        out = np.maximum(x, 0)
        if keep:
            self._mask = x > 0
        return out

    def backward(self, grad, need_input_grad=True):
        return grad * self._mask


class MaxPool2(Layer):
    def forward(self, x, train=False, keep=False):
        out, arg = kernels.maxpool2_forward(x)
        if keep:
            self._arg, self._hw = arg, x.shape[2:]
        return out

    def backward(self, grad, need_input_grad=True):
        return kernels.maxpool2_backward(grad, self._arg, *self._hw)


class Flatten(Layer):
    """``(C, N, H, W)`` -> ``(N, C*H*W)``."""

    def forward(self, x, train=False, keep=False):
        self._shape = x.shape
        return np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(x.shape[1], -1)

    def backward(self, grad, need_input_grad=True):
        c, n, h, w = self._shape
        return np.ascontiguousarray(grad.reshape(n, c, h, w).transpose(1, 0, 2, 3))


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None, dtype=np.float32, init_scale=1.0, relu_gain=True):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        scale = he_scale(n_in) if relu_gain else math.sqrt(1.0 / n_in)
        self.scale = np.dtype(dtype).type(scale)
        self.params["W"] = unit_uniform(rng, (n_in, n_out), dtype, gain=init_scale)
        self.params["b"] = np.zeros(n_out, dtype=dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._x = None

    def forward(self, x, train=False, keep=False):
        if keep:
            self._x = x
        out = x @ self.params["W"]
        out *= self.scale
        out += self.params["b"]
        return out

    def backward(self, grad, need_input_grad=True):
        if self._x is None:
            raise RuntimeError("Dense.backward called without a retained forward pass")
        self.grads["W"] += (self._x.T @ grad) * self.scale
        self.grads["b"] += grad.sum(axis=0)
        return (grad @ self.params["W"].T) * self.scale if need_input_grad else None


class Dropout(Layer):
    """Inverted dropout: identity in eval mode, ``mask / (1 - rate)`` in training."""

    def __init__(self, rate, rng):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x, train=False, keep=False):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        keep_p = 1.0 - self.rate
        mask = (self.rng.random(x.shape) < keep_p).astype(x.dtype) / x.dtype.type(keep_p)
        self._mask = mask
        return x * mask

    def backward(self, grad, need_input_grad=True):
        return grad if self._mask is None else grad * self._mask
