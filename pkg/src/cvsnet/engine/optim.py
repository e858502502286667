"""AdamW with decoupled weight decay, plus the warmup/cosine schedule."""

from __future__ import annotations

import math

import numpy as np

from .tensor import EngineError, Tensor


class MissingGradError(EngineError):
    """A parameter had no gradient when the optimizer stepped."""


def cosine_lr(epoch: int, total: int, warmup: int, base_lr: float) -> float:
    """Linear warmup to ``base_lr`` followed by cosine decay to 0.

    Warmup is 1-based: epoch ``e`` during warmup runs at
    ``base_lr * (e + 1) / warmup``; epoch ``warmup`` is the first full-rate
    epoch, after which the rate follows ``0.5 * (1 + cos(pi * t))`` with
    ``t`` the fraction of the post-warmup span completed.
    """
    if not 0 <= epoch < total:
        raise ValueError(f"epoch {epoch} outside [0, {total})")
    if warmup >= total:
        raise ValueError(f"warmup {warmup} must be < total {total}")
    if epoch < warmup:
        return base_lr * (epoch + 1) / warmup
    span = total - warmup
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - warmup) / span))


class AdamW:
    """Adam with bias correction and decay applied directly to the weights.

    The decay term ``p -= lr * wd * p`` runs before and independently of the
    adaptive update, so with a zero gradient the moments stay zero and the
    step is pure decay.
    """

    def __init__(self, params, lr: float = 1e-3, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params: list[tuple[str, Tensor]] = list(params)
        if not self.params:
            raise ValueError("optimizer needs at least one parameter")
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for _, p in self.params]
        self._v = [np.zeros_like(p.data) for _, p in self.params]

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        missing = [name for name, p in self.params if p.grad is None]
        if missing:
            raise MissingGradError(
                f"{len(missing)} parameter(s) without gradients, first: {missing[0]}")
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for (name, p), m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if self.weight_decay:
                p.data -= p.data.dtype.type(self.lr * self.weight_decay) * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= p.data.dtype.type(self.lr) * update.astype(p.data.dtype)
