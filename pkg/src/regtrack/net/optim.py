"""Plain SGD with optional momentum."""

from __future__ import annotations

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or Inf; the step was not applied."""


class SGD:
    """``v <- mu*v - lr*g; p <- p + v``. With ``mu = 0`` this is ``p <- p - lr*g``."""

    def __init__(self, net, lr: float, momentum: float = 0.0):
        if lr < 0 or not 0.0 <= momentum < 1.0:
            raise ValueError(f"need lr >= 0 and momentum in [0, 1), got {lr}, {momentum}")
        self.net = net
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self) -> None:
        params = self.net.parameters()
        grads = self.net.gradients()
        live = [n for n in params if not self.net.is_frozen(n)]
        bad = [n for n in live if not np.all(np.isfinite(grads[n]))]
        if bad:
            self.net.zero_grad()
            raise NonFiniteGradientError(f"non-finite gradient in {', '.join(bad)}; step aborted")
        lr = params[live[0]].dtype.type(self.lr) if live else self.lr
        for n in live:
            p, g = params[n], grads[n]
            if self.momentum:
                v = self.velocity.get(n)
                if v is None:
                    v = self.velocity[n] = np.zeros_like(p)
                v *= self.momentum
                v -= lr * g
                p += v
            else:
                p -= lr * g
        self.net.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self.velocity.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.velocity = {n: v.copy() for n, v in state.items()}


def sgd_step(net, lr: float) -> None:
    """One momentum-free step ``p <- p - lr*grad`` on every trainable parameter."""
    SGD(net, lr).step()
