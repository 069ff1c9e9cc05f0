"""Two-branch regression network.

Both crops go through a convolutional feature branch (shared weights by
default). The flattened features are concatenated and fed to a stack of
fully-connected layers ending in four linear outputs: the corner code of
the target inside the search region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Conv2D, Dense, Dropout, Flatten, MaxPool2, ReLU

# pixel values are mapped to roughly [-2, 2] before the first convolution
INPUT_OFFSET = 128.0
INPUT_SCALE = 1.0 / 64.0


class ShapeError(ValueError):
    """Input batch does not match the configured resolution."""


@dataclass(frozen=True)
class NetConfig:
    input_size: int = 64
    conv_filters: tuple[int, ...] = (8, 16, 32)
    conv_kernels: tuple[int, ...] = (3, 3, 3)
    conv_strides: tuple[int, ...] = (1, 1, 1)
    # 1 enables a 2x2 max-pool after the stage, 0 disables it
    conv_pools: tuple[int, ...] = (1, 1, 1)
    fc_layers: int = 3
    fc_width: int = 256
    dropout: float = 0.5
    output_scale: float = 10.0
    freeze_features: bool = False
    single_input: bool = False
    tied_branches: bool = True
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        n = len(self.conv_filters)
        if not (len(self.conv_kernels) == len(self.conv_strides) == len(self.conv_pools) == n):
            raise ValueError("conv_filters, conv_kernels, conv_strides and conv_pools must have equal length")
        if self.fc_layers < 0 or self.fc_width < 1 or self.input_size < 1:
            raise ValueError("fc_layers must be >= 0, fc_width and input_size >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def feature_shape(self) -> tuple[int, int, int]:
        c, h, w = 3, self.input_size, self.input_size
        for f, k, s, p in zip(self.conv_filters, self.conv_kernels, self.conv_strides, self.conv_pools):
            pad = k // 2
            h = (h + 2 * pad - k) // s + 1
            w = (w + 2 * pad - k) // s + 1
            if p:
                h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ValueError(f"input_size {self.input_size} too small for the conv stack")
            c = f
        return c, h, w

    def feature_dim(self) -> int:
        c, h, w = self.feature_shape()
        return c * h * w

    def head_input_dim(self) -> int:
        return self.feature_dim() * (1 if self.single_input else 2)


def count_parameters(cfg: NetConfig) -> dict[str, int]:
    """Analytic parameter counts for the conv branch(es) and the fc head."""
    conv, c = 0, 3
    for f, k in zip(cfg.conv_filters, cfg.conv_kernels):
        conv += f * c * k * k + f
        c = f
    if not cfg.tied_branches and not cfg.single_input:
        conv *= 2
    fc, d = 0, cfg.head_input_dim()
    for _ in range(cfg.fc_layers):
        fc += d * cfg.fc_width + cfg.fc_width
        d = cfg.fc_width
    fc += d * 4 + 4
    return {"conv": conv, "fc": fc, "total": conv + fc}


class Network:
    def __init__(self, cfg: NetConfig = NetConfig()):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        self.training = False
        n_branches = 1 if (cfg.tied_branches or cfg.single_input) else 2
        self.branches = [self._make_branch(init_rng) for _ in range(n_branches)]
        self.head: list = []
        d = cfg.head_input_dim()
        for _ in range(cfg.fc_layers):
            self.head += [Dense(d, cfg.fc_width, init_rng, self.dtype), ReLU()]
            if cfg.dropout > 0:
                self.head.append(Dropout(cfg.dropout, self.rng))
            d = cfg.fc_width
        # near-zero output layer: initial codes sit at the region origin
        self.head.append(Dense(d, 4, init_rng, self.dtype, init_scale=1e-3, relu_gain=False))
        self._kept = False

    def _make_branch(self, rng):
        layers, c = [], 3
        for f, k, s, p in zip(self.cfg.conv_filters, self.cfg.conv_kernels, self.cfg.conv_strides, self.cfg.conv_pools):
            layers += [Conv2D(c, f, k, s, rng=rng, dtype=self.dtype), ReLU()]
            if p:
                layers.append(MaxPool2())
            c = f
        layers.append(Flatten())
        return layers

    # parameters ------------------------------------------------------------

    def named_layers(self):
        """(prefix, layer) for every layer holding parameters, in a stable order."""
        out = []
        for b, branch in enumerate(self.branches):
            tag = "conv" if len(self.branches) == 1 else "conv" + "ab"[b]
            i = 0
            for layer in branch:
                if layer.params:
                    out.append((f"{tag}{i}", layer))
                    i += 1
        i = 0
        for layer in self.head:
            if layer.params:
                name = "out" if layer is self.head[-1] else f"fc{i}"
                out.append((name, layer))
                i += 1
        return out

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{p}.{k}": v for p, layer in self.named_layers() for k, v in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{p}.{k}": v for p, layer in self.named_layers() for k, v in layer.grads.items()}

    def is_frozen(self, name: str) -> bool:
        return self.cfg.freeze_features and name.startswith("conv")

    def zero_grad(self):
        for _, layer in self.named_layers():
            layer.zero_grad()

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    # forward / backward ----------------------------------------------------

    def prepare(self, crops) -> np.ndarray:
        """``(N, S, S, 3)`` pixel crops -> normalized ``(3, N, S, S)``."""
        x = np.asarray(crops)
        s = self.cfg.input_size
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != (s, s, 3):
            raise ShapeError(f"expected crops of shape (N, {s}, {s}, 3), got {x.shape}")
        x = x.astype(self.dtype).transpose(3, 0, 1, 2)
        return np.ascontiguousarray((x - self.dtype.type(INPUT_OFFSET)) * self.dtype.type(INPUT_SCALE))

    def _run(self, layers, x, keep):
        for layer in layers:
            x = layer.forward(x, self.training, keep)
        return x

    def features(self, crops, branch: int = 0, keep: bool = False) -> np.ndarray:
        return self._run(self.branches[branch], self.prepare(crops), keep)

    def forward(self, target_crops, search_crops) -> np.ndarray:
        """Corner codes ``(N, 4)`` for a batch of crop pairs.

        In training mode activations are retained for :meth:`backward`.
        """
        keep = self.training
        keep_conv = keep and not self.cfg.freeze_features
        search = self.prepare(search_crops)
        n = search.shape[1]
        if self.cfg.single_input:
            feats = self._run(self.branches[0], search, keep_conv)
        else:
            target = self.prepare(target_crops)
            if target.shape[1] != n:
                raise ShapeError(f"batch size mismatch: {target.shape[1]} target vs {n} search crops")
            if len(self.branches) == 1:
                both = self._run(self.branches[0], np.concatenate([target, search], axis=1), keep_conv)
                feats = np.concatenate([both[:n], both[n:]], axis=1)
            else:
                ft = self._run(self.branches[0], target, keep_conv)
                fs = self._run(self.branches[1], search, keep_conv)
                feats = np.concatenate([ft, fs], axis=1)
        out = self._run(self.head, feats, keep)
        self._kept = keep
        return out

    def __call__(self, target_crops, search_crops):
        return self.forward(target_crops, search_crops)

    def backward(self, grad_out) -> None:
        """Accumulate parameter gradients from ``dLoss/dOutput`` of shape ``(N, 4)``."""
        if not self._kept:
            raise RuntimeError("backward requires a preceding forward pass in training mode")
        g = np.asarray(grad_out, dtype=self.dtype)
        for i, layer in enumerate(reversed(self.head)):
            last = i == len(self.head) - 1
            g = layer.backward(g, need_input_grad=not (last and self.cfg.freeze_features))
        self._kept = False
        if self.cfg.freeze_features:
            return
        d = self.cfg.feature_dim()
        if self.cfg.single_input:
            self._back(self.branches[0], g)
        elif len(self.branches) == 1:
            self._back(self.branches[0], np.concatenate([g[:, :d], g[:, d:]], axis=0))
        else:
            self._back(self.branches[0], np.ascontiguousarray(g[:, :d]))
            self._back(self.branches[1], np.ascontiguousarray(g[:, d:]))

    @staticmethod
    def _back(layers, g):
        for i, layer in enumerate(reversed(layers)):
            # the first conv never needs a gradient w.r.t. the pixels
            g = layer.backward(g, need_input_grad=i < len(layers) - 1)

    # state transfer -------------------------------------------------------

    def copy_parameters_from(self, other: "Network", prefix: str | None = None) -> None:
        src = other.parameters()
        for name, p in self.parameters().items():
            if prefix is None or name.startswith(prefix):
                p[...] = src[name]


# losses -------------------------------------------------------------------


def l1_loss(pred, target):
    """Per-example ``sum |p - t|`` averaged over the batch, and its gradient.

    The subgradient at 0 is 0.
    """
    pred = np.asarray(pred)
    diff = pred - np.asarray(target, dtype=pred.dtype)
    n = diff.shape[0] if diff.ndim > 1 else 1
    loss = float(np.abs(diff).sum()) / n
    return loss, (np.sign(diff) / n).astype(pred.dtype)


def l2_loss(pred, target):
    """Per-example ``sum (p - t)^2`` averaged over the batch, and its gradient."""
    pred = np.asarray(pred)
    diff = pred - np.asarray(target, dtype=pred.dtype)
    n = diff.shape[0] if diff.ndim > 1 else 1
    loss = float((diff * diff).sum()) / n
    return loss, (2.0 * diff / n).astype(pred.dtype)


LOSSES = {"l1": l1_loss, "l2": l2_loss}
