"""2-D convolution (grouped, strided, padded) and channel shuffling.

The convolution is an im2col/patch-matrix rewrite: sliding windows are
gathered once, the kernel application becomes one batched matmul per call,
and the backward pass scatters column gradients back with a small loop over
kernel offsets.  Correctness is pinned to a naive seven-loop oracle in the
test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import flops
from .tensor import ShapeError, Tensor, _make, as_tensor


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a convolution, used for validation and counting."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: int = 1
    padding: tuple[int, int] | int = 0
    groups: int = 1
    has_bias: bool = False

    def __post_init__(self):
        kh, kw = _pair(self.kernel)
        object.__setattr__(self, "kernel", (kh, kw))
        object.__setattr__(self, "padding", _pair(self.padding))
        if min(self.in_channels, self.out_channels, kh, kw, self.stride,
               self.groups) < 1:
            raise ShapeError(f"non-positive field in {self}")
        if min(self.padding) < 0:
            raise ShapeError(f"negative padding in {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"channels ({self.in_channels} in, {self.out_channels} out) "
                f"not divisible by groups={self.groups}")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        (kh, kw), (ph, pw), s = self.kernel, self.padding, self.stride
        oh = (h + 2 * ph - kh) // s + 1
        ow = (w + 2 * pw - kw) // s + 1
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"kernel {self.kernel} with padding {self.padding} does not fit "
                f"a {h}x{w} input")
        return oh, ow

    def param_count(self) -> int:
        n = self.out_channels * (self.in_channels // self.groups) \
            * self.kernel[0] * self.kernel[1]
        return n + (self.out_channels if self.has_bias else 0)

    def macs(self, h: int, w: int) -> int:
        oh, ow = self.out_hw(h, w)
        taps = (self.in_channels // self.groups) * self.kernel[0] * self.kernel[1]
        return oh * ow * self.out_channels * taps


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, *,
           stride: int = 1, padding=0, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation of NCHW input with OIHW weights.

    Output spatial size is ``floor((h + 2*pad - kh)/stride) + 1`` (same for
    width) and must be >= 1.  Differentiable w.r.t. ``x``, ``w`` and ``bias``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-D (n,c,h,w), got {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-D (o,i,kh,kw), got {w.shape}")
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    ph, pw = _pair(padding)
    s = int(stride)
    if c % groups or o % groups:
        raise ShapeError(f"channels in={c} out={o} not divisible by groups={groups}")
    if cg != c // groups:
        raise ShapeError(
            f"weight expects {cg} channels per group but input has "
            f"{c}//{groups} = {c // groups}")
    spec = ConvSpec(c, o, (kh, kw), s, (ph, pw), groups, bias is not None)
    oh, ow = spec.out_hw(h, wd)

    if ph or pw:
        xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    else:
        xp = x.data
    # cols: (n, groups, (c/g)*kh*kw, oh*ow)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)) \
        .reshape(n, groups, (c // groups) * kh * kw, oh * ow)
    wg = w.data.reshape(groups, o // groups, (c // groups) * kh * kw)
    out = np.matmul(wg, cols).reshape(n, o, oh, ow)
    flops.add_conv(n * o * oh * ow, (c // groups) * kh * kw)
    if bias is not None:
        if bias.data.shape != (o,):
            raise ShapeError(f"bias shape {bias.data.shape} != ({o},)")
        out = out + bias.data.reshape(1, o, 1, 1)

    def backward(g):
        gf = g.reshape(n, groups, o // groups, oh * ow)
        gw = np.matmul(gf, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.data.shape)
        gcols = np.matmul(wg.transpose(0, 2, 1), gf) \
            .reshape(n, c, kh, kw, oh, ow)
        gxp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += gcols[:, :, i, j]
        gx = gxp[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        if bias is not None:
            return (gx, gw, gb)
        return (gx, gw)

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, "conv2d", backward)


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """Interleave channel groups: view c as (groups, c/groups), transpose, flatten.

    Spatial data is untouched; the op is a fixed channel permutation and its
    gradient is the inverse permutation.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"channel_shuffle input must be 4-D, got {x.shape}")
    n, c, h, w = x.shape
    if c % groups:
        raise ShapeError(f"channels {c} not divisible by groups={groups}")
    out = x.data.reshape(n, groups, c // groups, h, w) \
        .transpose(0, 2, 1, 3, 4).reshape(n, c, h, w)

    def backward(g):
        return (g.reshape(n, c // groups, groups, h, w)
                .transpose(0, 2, 1, 3, 4).reshape(n, c, h, w),)

    return _make(np.ascontiguousarray(out), (x,), "channel_shuffle", backward)
