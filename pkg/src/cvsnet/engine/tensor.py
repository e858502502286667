"""Dense-array autodiff core.

A ``Tensor`` wraps a numpy array plus an optional gradient and a record of
the operation that produced it.  Calling :meth:`Tensor.backward` on a scalar
result walks the recorded graph in reverse topological order and accumulates
``d result / d leaf`` into each participating tensor's ``grad``.

Arrays are rank-general; convolution and the vision blocks restrict
themselves to the (batch, channels, height, width) layout.  float32 is the
working precision, float64 is used by the finite-difference checks.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

# When enabled every op asserts its output is finite and raises NumericsError
# naming the op that produced the first bad value.  Off by default: the check
# costs a full pass over each result.
_FINITE_CHECKS = False


class EngineError(Exception):
    """Base class for engine failures."""


class ShapeError(EngineError, ValueError):
    """Operand shapes violate an operation's contract."""


class NumericsError(EngineError, ArithmeticError):
    """An operation produced NaN or Inf from finite inputs."""


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-op finiteness assertions; returns the previous setting."""
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return prev


def _check_finite(data: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values produced by op '{op}'")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 _parents: tuple = (), _backward=None):
        if isinstance(data, np.ndarray):
            self.data = data
        else:
            arr = np.asarray(data)
            if arr.dtype.kind in "iub" and not requires_grad:
                self.data = arr
            else:
                self.data = arr.astype(DEFAULT_DTYPE, copy=False)
        if requires_grad and self.data.dtype.kind != "f":
            raise ShapeError("requires_grad tensors must hold floats, got "
                             f"dtype {self.data.dtype}")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = _parents
        self._backward = _backward

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, op={self.op!r}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        out = Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)
        return out

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff ------------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every participating ``grad``.

        ``self`` must be a scalar.  Repeated calls without clearing grads
        accumulate, which is what gradient accumulation over micro-batches
        relies on.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar, got shape {self.data.shape}")
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division is not an engine op")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order of the graph below ``root`` (iterative)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward):
    """Wrap an op result, recording the tape edge only when a parent needs it."""
    _check_finite(data, op)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, op=op,
                      _parents=tuple(parents), _backward=backward)
    return Tensor(data, op=op)


def graph_ops(root: Tensor) -> set[str]:
    """Set of op names in the computation graph below ``root``."""
    return {node.op for node in _toposort(root)}


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape))
                 if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, Tensor):
        out = a.data + b.data
        return _make(out, (a, b), "add",
                     lambda g: (_unbroadcast(g, a.data.shape),
                                _unbroadcast(g, b.data.shape)))
    out = a.data + a.data.dtype.type(b)
    return _make(out, (a,), "add", lambda g: (g,))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, Tensor):
        out = a.data * b.data
        return _make(out, (a, b), "mul",
                     lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                _unbroadcast(g * a.data, b.data.shape)))
    c = a.data.dtype.type(b)
    return _make(a.data * c, (a,), "mul", lambda g: (g * c,))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), "neg", lambda g: (-g,))


def scaled_relu(x: Tensor, gain: float) -> Tensor:
    """``gain * max(0, x)`` elementwise.

    With a positive gain this is a plain rectifier; a negative gain yields an
    inhibitory response (zero for negative inputs, negatively sloped for
    positive ones).  Subgradient at 0 is 0.
    """
    if not math.isfinite(gain) or gain == 0.0:
        raise ShapeError(f"scaled_relu gain must be finite and nonzero, got {gain}")
    x = as_tensor(x)
    mask = x.data > 0
    c = x.data.dtype.type(gain)
    out = np.where(mask, x.data * c, x.data.dtype.type(0))
    return _make(out, (x,), "scaled_relu", lambda g: (g * (mask * c),))


def relu(x: Tensor) -> Tensor:
    return scaled_relu(x, 1.0)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh form)."""
    x = as_tensor(x)
    d = x.data
    u = _GELU_C * (d + _GELU_A * d ** 3)
    t = np.tanh(u)
    out = 0.5 * d * (1.0 + t)

    def backward(g):
        sech2 = 1.0 - t * t
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * d * d)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * sech2 * du),)

    return _make(out.astype(d.dtype, copy=False), (x,), "gelu", backward)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _make(t, (x,), "tanh", lambda g: (g * (1.0 - t * t),))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = np.matmul(a.data, b.data)
    from . import flops
    flops.add_matmul(out.shape, a.data.shape[-1])

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape))

    return _make(out, (a, b), "matmul", backward)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    old = x.data.shape
    out = x.data.reshape(shape)
    return _make(out, (x,), "reshape", lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = np.argsort(axes)
    out = np.transpose(x.data, axes)
    return _make(out, (x,), "transpose", lambda g: (np.transpose(g, inv),))


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of zero tensors")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offs = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, range(offs[i], offs[i + 1]), axis=axis)
                     for i in range(len(ts)))

    return _make(out, ts, "concat", backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    x = as_tensor(x)
    n = x.data.shape[axis]
    if not (0 <= start and start + length <= n):
        raise ShapeError(f"narrow [{start}:{start + length}] outside axis of size {n}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = np.ascontiguousarray(x.data[idx])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _make(out, (x,), "narrow", backward)


def roll(x: Tensor, shifts, axes) -> Tensor:
    """Cyclic shift; gradient is the inverse shift."""
    x = as_tensor(x)
    shifts = tuple(np.atleast_1d(shifts).tolist())
    axes = tuple(np.atleast_1d(axes).tolist())
    out = np.roll(x.data, shifts, axis=axes)
    inv = tuple(-s for s in shifts)
    return _make(out, (x,), "roll", lambda g: (np.roll(g, inv, axis=axes),))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def reduce_sum(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _make(out, (x,), "sum", backward)


def reduce_mean(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.mean(axis=axis))
    n = x.data.size if axis is None else x.data.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / n, x.data.shape).copy(),)
        g = np.expand_dims(g, axis) / n
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _make(out, (x,), "mean", backward)
