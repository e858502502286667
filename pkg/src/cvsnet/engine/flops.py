"""Multiply-accumulate tally for convolution and matmul forward passes.

Counting rule: FLOPs = 2 x multiply-accumulates of conv/linear kernels.
Bias additions and elementwise/normalization work are not counted.  The
tally is off unless a :func:`tally` context is active, so the hot path pays
a single ``is None`` check.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_ACTIVE: "FlopTally | None" = None


class FlopTally:
    def __init__(self):
        self.macs = 0

    @property
    def flops(self) -> int:
        return 2 * self.macs


@contextmanager
def tally():
    """Collect MACs of all conv2d/matmul calls executed under the context."""
    global _ACTIVE
    prev, _ACTIVE = _ACTIVE, FlopTally()
    try:
        yield _ACTIVE
    finally:
        _ACTIVE = prev


def add_matmul(out_shape, inner_dim: int) -> None:
    if _ACTIVE is not None:
        _ACTIVE.macs += int(np.prod(out_shape, dtype=np.int64)) * int(inner_dim)


def add_conv(out_elems: int, taps_per_output: int) -> None:
    if _ACTIVE is not None:
        _ACTIVE.macs += int(out_elems) * int(taps_per_output)
