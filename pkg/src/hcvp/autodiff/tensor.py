"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its input tensors and a backward closure on the
output tensor. ``Tensor.backward()`` materializes the topological order of
the recorded graph and walks it exactly once in reverse, accumulating
gradients additively into every reachable tensor that requires them.
Graphs live for a single forward/backward pass: links are dropped after
the backward walk so intermediates can be collected.

All data is 64-bit; subgraphs in which no input requires a gradient are
constant-folded (no node is recorded), so a frozen submodel costs nothing
at backward time.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


def _as_array(value) -> np.ndarray:
    # float64 is the default (and what gradchecks assume); float32 arrays
    # are kept as-is so a whole model can opt into single precision
    arr = np.asarray(value)
    if arr.dtype == np.float32:
        return arr
    return np.asarray(arr, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # ------------------------------------------------------------------
    # introspection
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """The underlying array. Callers must not mutate it."""
        return self.data

    def detach(self) -> "Tensor":
        """Same values, cut out of the graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ------------------------------------------------------------------
    # backward engine
    def backward(self) -> None:
        """Reverse-mode pass from a scalar root.

        Visits each recorded node once, children before parents; multiple
        uses of the same tensor accumulate additively. The graph links are
        cleared afterwards (one graph per pass, no higher-order grads).
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
        for node in topo:
            node._parents = ()
            node._backward = None

    # ------------------------------------------------------------------
    # arithmetic (operators defined below, after the op helpers)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # `g` may be a view of the child's gradient, and the same array is
    # handed to both parents of e.g. an add: backward rules must treat an
    # incoming gradient as read-only, and this helper allocates instead of
    # running += on the stored one.
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager suppressing graph construction (pure inference)."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for {ndim}-d tensor")
        out.append(a % ndim)
    return tuple(out)


# ----------------------------------------------------------------------
# elementwise binary ops

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * data / b.data, b.shape))

    return _node(data, (a, b), backward)


# scalar fast paths: no constant node, smaller graphs

def _add_scalar(a: Tensor, s: float) -> Tensor:
    def backward(g):
        _accumulate(a, g)

    return _node(a.data + s, (a,), backward)


def _mul_scalar(a: Tensor, s: float) -> Tensor:
    def backward(g):
        _accumulate(a, g * s)

    return _node(a.data * s, (a,), backward)


def _rdiv_scalar(s: float, a: Tensor) -> Tensor:
    data = s / a.data

    def backward(g):
        _accumulate(a, -g * data / a.data)

    return _node(data, (a,), backward)


def pow_(a: Tensor, exponent: float) -> Tensor:
    data = a.data ** exponent

    def backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _node(data, (a,), backward)


# ----------------------------------------------------------------------
# elementwise unary ops

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    data = np.where(mask, a.data, 0.0)

    def backward(g):
        _accumulate(a, g * mask)

    return _node(data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * data)

    return _node(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _node(data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * 0.5 / data)

    return _node(data, (a,), backward)


# ----------------------------------------------------------------------
# matmul

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(data, (a, b), backward)


# ----------------------------------------------------------------------
# shape ops

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    data = a.data.reshape(tuple(shape))

    def backward(g):
        _accumulate(a, g.reshape(old))

    return _node(data, (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))
    data = a.data.transpose(axes)

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _node(data, (a,), backward)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = np.broadcast_to(a.data, shape)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))

    return _node(data, (a,), backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    (axis,) = _normalize_axes(axis, a.ndim)
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}) out of bounds for axis {axis} of {a.shape}"
        )
    index = tuple(slice(None) if i != axis else slice(start, start + length) for i in range(a.ndim))
    data = a.data[index]

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[index] = g
        _accumulate(a, full)

    return _node(data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    (axis,) = _normalize_axes(axis, tensors[0].ndim)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = tuple(
                slice(None) if i != axis else slice(int(lo), int(hi)) for i in range(t.ndim)
            )
            _accumulate(t, g[index])

    return _node(data, tuple(tensors), backward)


# ----------------------------------------------------------------------
# reductions

def _reduce_check(a: Tensor, axes: tuple[int, ...]) -> None:
    for ax in axes:
        if a.shape[ax] == 0:
            raise ShapeError(f"zero-length reduction over axis {ax} of {a.shape}")


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    _reduce_check(a, axes)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        grad = g if keepdims else np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(grad, a.shape))

    return _node(data, (a,), backward)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    _reduce_check(a, axes)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        grad = g if keepdims else np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(grad / count, a.shape))

    return _node(data, (a,), backward)


# ----------------------------------------------------------------------
# operator plumbing

def _coerce(other) -> "Tensor | float | None":
    if isinstance(other, Tensor):
        return other
    if isinstance(other, (int, float, np.floating, np.integer)):
        return float(other)
    if isinstance(other, np.ndarray):
        return Tensor(other)
    return None


def _binary(self, other, tensor_op, scalar_op):
    other = _coerce(other)
    if other is None:
        return NotImplemented
    if isinstance(other, Tensor):
        return tensor_op(self, other)
    return scalar_op(self, other)


Tensor.__add__ = lambda self, other: _binary(self, other, add, _add_scalar)
Tensor.__radd__ = Tensor.__add__
Tensor.__sub__ = lambda self, other: _binary(self, other, sub, lambda a, s: _add_scalar(a, -s))
Tensor.__rsub__ = lambda self, other: _binary(
    self, other, lambda a, b: sub(b, a), lambda a, s: _add_scalar(_mul_scalar(a, -1.0), s)
)
Tensor.__mul__ = lambda self, other: _binary(self, other, mul, _mul_scalar)
Tensor.__rmul__ = Tensor.__mul__
Tensor.__truediv__ = lambda self, other: _binary(self, other, div, lambda a, s: _mul_scalar(a, 1.0 / s))
Tensor.__rtruediv__ = lambda self, other: _binary(
    self, other, lambda a, b: div(b, a), lambda a, s: _rdiv_scalar(s, a)
)
Tensor.__neg__ = lambda self: _mul_scalar(self, -1.0)
Tensor.__pow__ = lambda self, e: pow_(self, float(e))
Tensor.__matmul__ = matmul

Tensor.reshape = reshape
Tensor.transpose = transpose
Tensor.broadcast_to = broadcast_to
Tensor.narrow = narrow
Tensor.sum = tensor_sum
Tensor.mean = tensor_mean
Tensor.relu = relu
Tensor.exp = exp
Tensor.log = log
Tensor.sqrt = sqrt
