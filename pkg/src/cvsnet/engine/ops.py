"""Composite differentiable ops: layer normalization and the training loss."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _make, as_tensor


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layernorm params must have shape ({d},), got "
            f"{gamma.data.shape} and {beta.data.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xn = xc * inv
    out = xn * gamma.data + beta.data

    def backward(g):
        gg = (g * xn).sum(axis=tuple(range(g.ndim - 1)))
        gb = g.sum(axis=tuple(range(g.ndim - 1)))
        gxn = g * gamma.data
        gx = inv * (gxn - gxn.mean(axis=-1, keepdims=True)
                    - xn * (gxn * xn).mean(axis=-1, keepdims=True))
        return (gx, gg, gb)

    return _make(out, (x, gamma, beta), "layernorm", backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray,
                          smoothing: float = 0.0) -> Tensor:
    """Mean label-smoothed cross entropy over a batch of logits.

    Target distribution puts ``1 - smoothing`` on the true class and
    ``smoothing / (classes - 1)`` on every other class.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    if not (0.0 <= smoothing < 1.0):
        raise ShapeError(f"smoothing must lie in [0, 1), got {smoothing}")
    labels = np.asarray(labels)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= c:
        raise ShapeError(
            f"label out of range [0, {c}): min={labels.min()} max={labels.max()}")

    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    logzsum = np.log(ez.sum(axis=1, keepdims=True)) + zmax
    logp = z - logzsum

    q = np.full((b, c), (smoothing / (c - 1)) if c > 1 else 0.0, dtype=z.dtype)
    q[np.arange(b), labels] = 1.0 - smoothing
    loss = np.asarray(-(q * logp).sum() / b, dtype=z.dtype)

    def backward(g):
        p = ez / ez.sum(axis=1, keepdims=True)
        return (g * (p - q) / b,)

    return _make(loss, (logits,), "cross_entropy", backward)
