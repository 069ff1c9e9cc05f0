"""Central finite-difference gradient checks."""

from __future__ import annotations

import numpy as np


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def check_layer(layer, x: np.ndarray, eps: float = 1e-5, seed: int = 0) -> dict[str, float]:
    """Relative errors for the input and every parameter of ``layer``.

    The scalar objective is ``sum(forward(x) * R)`` for a fixed random ``R``.
    """
    x = np.array(x, dtype=np.float64)
    out = layer.forward(x, train=True, keep=True)
    r = np.random.default_rng(seed).standard_normal(out.shape)
    layer.zero_grad()
    dx = layer.backward(r)

    def f():
        return float(np.sum(layer.forward(x, train=True, keep=False) * r))

    errors = {"input": rel_error(dx, numeric_grad(f, x, eps))}
    for name, p in layer.params.items():
        errors[name] = rel_error(layer.grads[name], numeric_grad(f, p, eps))
    return errors


def check_network(net, target, search, labels, loss_fn, eps: float = 1e-5) -> dict[str, float]:
    """Relative error per parameter tensor of ``net`` (double precision, dropout off)."""
    if net.dtype != np.float64:
        raise ValueError("gradient checks need a float64 network")
    if net.cfg.dropout > 0:
        raise ValueError("disable dropout for gradient checks")
    net.train()
    net.zero_grad()
    _, g = loss_fn(net.forward(target, search), labels)
    net.backward(g)
    analytic = {k: v.copy() for k, v in net.gradients().items()}

    def f():
        return loss_fn(net.forward(target, search), labels)[0]

    errors = {}
    for name, p in net.parameters().items():
        if net.is_frozen(name):
            continue
        errors[name] = rel_error(analytic[name], numeric_grad(f, p, eps))
    net.zero_grad()
    return errors
