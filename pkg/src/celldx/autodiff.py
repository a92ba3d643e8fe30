"""Reverse-mode automatic differentiation over small dense arrays.

A :class:`Tensor` wraps a float64 numpy array (rank <= 2) and records
the operation that produced it; calling :meth:`Tensor.backward` on a
scalar loss walks the graph in reverse topological order and
accumulates exact gradients. The op set is deliberately small — affine
maps, pointwise nonlinearities, reductions, cumulative sums, slicing,
concatenation, and table interpolation — which covers every loss in
this package while keeping each backward rule a few lines.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, ShapeError


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in a dynamically recorded computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # make ndarray <op> Tensor defer to our reflected operators instead
    # of numpy broadcasting over the object
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are rank <= 2, got rank {arr.ndim}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    # -- graph bookkeeping ------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> np.ndarray:
        """The value as a plain array, cut out of the graph."""
        return self.data

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Populate ``grad`` on every reachable ``requires_grad`` tensor."""
        if self.data.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        if not np.isfinite(self.data):
            raise NumericalError(f"loss is not finite: {self.data}")
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
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic --------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward=backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return Tensor(-self.data, parents=(self,), backward=backward)

    def __sub__(self, other):
        other = as_tensor(other)
        out_data = self.data - other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward=backward)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward=backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / other.data**2, other.data.shape)
                )

        return Tensor(out_data, parents=(self, other), backward=backward)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise ShapeError("only scalar exponents are supported")
        out_data = self.data**exponent

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor(out_data, parents=(self,), backward=backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError("matmul expects rank-2 operands")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul mismatch: {self.shape} @ {other.shape}")
        out_data = self.data @ other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        return Tensor(out_data, parents=(self, other), backward=backward)

    def __getitem__(self, key):
        out_data = self.data[key]

        def backward(g):
            scatter = np.zeros_like(self.data)
            scatter[key] += g
            self._accumulate(scatter)

        return Tensor(out_data, parents=(self,), backward=backward)

    # -- nonlinearities ----------------------------------------------

    def tanh(self):
        t = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (1.0 - t * t))

        return Tensor(t, parents=(self,), backward=backward)

    def softplus(self):
        out_data = np.logaddexp(0.0, self.data)

        def backward(g):
            self._accumulate(g * _sigmoid(self.data))

        return Tensor(out_data, parents=(self,), backward=backward)

    def relu(self):
        out_data = np.maximum(0.0, self.data)

        def backward(g):
            self._accumulate(g * (self.data > 0.0))

        return Tensor(out_data, parents=(self,), backward=backward)

    def square(self):
        def backward(g):
            self._accumulate(g * 2.0 * self.data)

        return Tensor(self.data**2, parents=(self,), backward=backward)

    # -- reductions and reshaping -------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        return Tensor(out_data, parents=(self,), backward=backward)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def cumsum(self, axis: int):
        out_data = np.cumsum(self.data, axis=axis)

        def backward(g):
            flipped = np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)
            self._accumulate(flipped)

        return Tensor(out_data, parents=(self,), backward=backward)

    def reshape(self, *shape):
        out_data = self.data.reshape(*shape)
        if out_data.ndim > 2:
            raise ShapeError("tensors are rank <= 2")

        def backward(g):
            self._accumulate(g.reshape(self.data.shape))

        return Tensor(out_data, parents=(self,), backward=backward)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def hstack(tensors) -> Tensor:
    """Concatenate along the last axis."""
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    if any(t.ndim != ndim for t in tensors):
        raise ShapeError("hstack operands must share rank")
    out_data = np.hstack([t.data for t in tensors])
    widths = [t.data.shape[-1] for t in tensors]

    def backward(g):
        offset = 0
        for t, w in zip(tensors, widths):
            if t.requires_grad:
                chunk = g[..., offset : offset + w]
                t._accumulate(chunk.reshape(t.data.shape))
            offset += w

    return Tensor(out_data, parents=tuple(tensors), backward=backward)


def interp_table(x: Tensor, xp: np.ndarray, fp: np.ndarray) -> Tensor:
    """Piecewise-linear table lookup, differentiable in ``x``.

    Forward is ``np.interp`` (clamped outside the table); backward
    multiplies by the active cell's slope, which is the exact derivative
    everywhere except at knots, and zero in the clamped regions.
    """
    x = as_tensor(x)
    xp = np.asarray(xp, dtype=np.float64)
    fp = np.asarray(fp, dtype=np.float64)
    out_data = np.interp(x.data, xp, fp)
    seg = np.clip(np.searchsorted(xp, x.data, side="right") - 1, 0, len(xp) - 2)
    slopes = (np.diff(fp) / np.diff(xp))[seg]
    inside = (x.data >= xp[0]) & (x.data <= xp[-1])
    local = np.where(inside, slopes, 0.0)

    def backward(g):
        x._accumulate(g * local)

    return Tensor(out_data, parents=(x,), backward=backward)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target."""
    return (pred - as_tensor(target)).square().mean()
