"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small tape-based engine: every operation records its parents and a
closure that routes the upstream gradient to them. ``Tensor.backward()``
walks the tape in reverse topological order. Broadcasting follows numpy
rules; gradients of broadcast operands are summed back to the operand's
shape.

Everything is float64. That is deliberate: the test suite verifies the
analytic gradients of every loss in this package against central finite
differences, which needs the full mantissa.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import kernels

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the context (forward-only)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _sum_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    # -- bookkeeping --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self, grad=None):
        """Backpropagate from this tensor through the recorded tape."""
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = _node(self.data + other.data, (self, other))
        if out._parents:

            def backward(g):
                if self.requires_grad:
                    self._accumulate(_sum_to_shape(g, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_sum_to_shape(g, other.data.shape))

            out._backward = backward
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = as_tensor(other)
        out = _node(self.data * other.data, (self, other))
        if out._parents:

            def backward(g):
                if self.requires_grad:
                    self._accumulate(_sum_to_shape(g * other.data, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_sum_to_shape(g * self.data, other.data.shape))

            out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __truediv__(self, other):
        other = as_tensor(other)
        out = _node(self.data / other.data, (self, other))
        if out._parents:

            def backward(g):
                if self.requires_grad:
                    self._accumulate(_sum_to_shape(g / other.data, self.data.shape))
                if other.requires_grad:
                    other._accumulate(
                        _sum_to_shape(-g * self.data / (other.data * other.data), other.data.shape)
                    )

            out._backward = backward
        return out

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        out = _node(self.data**exponent, (self,))
        if out._parents:

            def backward(g):
                self._accumulate(g * exponent * self.data ** (exponent - 1))

            out._backward = backward
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        out = _node(self.data @ other.data, (self, other))
        if out._parents:

            def backward(g):
                if self.requires_grad:
                    ga = g @ np.swapaxes(other.data, -1, -2)
                    self._accumulate(_sum_to_shape(ga, self.data.shape))
                if other.requires_grad:
                    gb = np.swapaxes(self.data, -1, -2) @ g
                    other._accumulate(_sum_to_shape(gb, other.data.shape))

            out._backward = backward
        return out

    # -- elementwise functions ----------------------------------------------

    def exp(self):
        y = np.exp(self.data)
        out = _node(y, (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g * y)
        return out

    def log(self):
        out = _node(np.log(self.data), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g / self.data)
        return out

    def sqrt(self):
        y = np.sqrt(self.data)
        out = _node(y, (self,))
        if out._parents:

            def backward(g):
                # subgradient 0 at the origin keeps norms-at-zero finite
                with np.errstate(divide="ignore", invalid="ignore"):
                    grad = np.where(y == 0.0, 0.0, g / (2.0 * y))
                self._accumulate(grad)

            out._backward = backward
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = _node(y, (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g * (1.0 - y * y))
        return out

    def sigmoid(self):
        y = 0.5 * (np.tanh(0.5 * self.data) + 1.0)
        out = _node(y, (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g * y * (1.0 - y))
        return out

    def relu(self):
        mask = self.data > 0
        out = _node(np.where(mask, self.data, 0.0), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g * mask)
        return out

    def abs(self):
        out = _node(np.abs(self.data), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g * np.sign(self.data))
        return out

    def clip(self, lo: float, hi: float):
        mask = (self.data >= lo) & (self.data <= hi)
        out = _node(np.clip(self.data, lo, hi), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g * mask)
        return out

    # -- reductions and shape ops --------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._parents:

            def backward(g):
                if axis is None:
                    self._accumulate(np.broadcast_to(g, self.data.shape).copy())
                else:
                    gg = g if keepdims else np.expand_dims(g, axis)
                    self._accumulate(np.broadcast_to(gg, self.data.shape).copy())

            out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g.reshape(self.data.shape))
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)
        out = _node(self.data.transpose(axes), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g.transpose(inverse))
        return out

    def __getitem__(self, idx):
        out = _node(self.data[idx], (self,))
        if out._parents:

            def backward(g):
                if self.grad is None:
                    self.grad = np.zeros_like(self.data)
                np.add.at(self.grad, idx, g)

            out._backward = backward
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor(data)
    if _grad_enabled:
        live = tuple(p for p in parents if p.requires_grad)
        if live:
            out.requires_grad = True
            out._parents = live
    return out


# ---------------------------------------------------------------------------
# composite and structural operations
# ---------------------------------------------------------------------------


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = _node(data, tuple(tensors))
    if out._parents:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    t._accumulate(g[tuple(idx)])

        out._backward = backward
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        t = as_tensor(t)
        shape = list(t.data.shape)
        shape.insert(axis, 1)
        expanded.append(t.reshape(shape))
    return concat(expanded, axis=axis)


def logsumexp(t: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    # The max shift is a constant, so it carries no gradient of its own.
    shift = np.max(t.data, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    shifted = t - shift
    out = shifted.exp().sum(axis=axis, keepdims=True).log() + shift
    if not keepdims:
        out = out.reshape(tuple(np.delete(out.data.shape, axis)))
    return out


def softmax(t: Tensor, axis: int) -> Tensor:
    return (t - logsumexp(t, axis=axis, keepdims=True)).exp()


def log_softmax(t: Tensor, axis: int) -> Tensor:
    return t - logsumexp(t, axis=axis, keepdims=True)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Strided 2D convolution (NCHW) with gradient support."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    out_data, cols = kernels.conv2d_forward(x.data, w.data, b.data, stride, pad)
    out = _node(out_data, (x, w, b))
    if out._parents:

        def backward(g):
            gx, gw, gb = kernels.conv2d_backward(g, cols, x.data.shape, w.data, stride, pad)
            if x.requires_grad:
                x._accumulate(gx)
            if w.requires_grad:
                w._accumulate(gw)
            if b.requires_grad:
                b._accumulate(gb)

        out._backward = backward
    return out
