"""Dense float tensors with reverse-mode automatic differentiation.

Correctness-first numpy kernels: every differentiable operation here is
covered by a central finite-difference check in the test suite. Training
and gradient checking run in float64; float32 is supported for inference.
Graphs are built eagerly; ``Tensor.backward`` walks them in reverse
topological order and accumulates gradients on leaf tensors only.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names the offending dims."""


_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense n-dimensional array plus an optional autodiff graph handle.

    ``data`` is always float32 or float64. ``grad`` is populated on leaf
    tensors (those created directly, not by an operation) that have
    ``requires_grad`` set; repeated ``backward`` calls accumulate into it
    additively until ``zero_grad`` is called.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # ------------------------------------------------------------------
    # basic introspection
    # ------------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        """Detached dtype cast (used for the float32 inference path)."""
        return Tensor(self.data.astype(dtype))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # ------------------------------------------------------------------
    # reverse-mode sweep
    # ------------------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must be a scalar. Calling twice without resetting grads
        doubles them (additive accumulation contract).
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
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

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            gout = grads.pop(id(node), None)
            if gout is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = gout if node.grad is None else node.grad + gout
                continue
            for parent, gin in zip(node._parents, node._backward(gout)):
                if gin is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + gin
                else:
                    grads[key] = gin

    # ------------------------------------------------------------------
    # arithmetic operators
    # ------------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return take(self, key)

    # method forms of the common functions
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return absolute(self)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return tensor_max(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def _scalar_error(t: Tensor):
    raise ValueError(f"expected a scalar tensor, got shape {t.data.shape}")


# ----------------------------------------------------------------------
# graph-node construction helpers
# ----------------------------------------------------------------------

def astensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else np.float64
    return Tensor(np.asarray(value, dtype=dtype))


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap ``data`` in a Tensor, attaching the graph edge when grads are on."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over broadcast axes so it matches ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ----------------------------------------------------------------------
# elementwise primitives
# ----------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = astensor(a, b if isinstance(b, Tensor) else None)
    b = astensor(b, a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return make_node(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = astensor(a, b if isinstance(b, Tensor) else None)
    b = astensor(b, a)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return make_node(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = astensor(a, b if isinstance(b, Tensor) else None)
    b = astensor(b, a)
    out = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return make_node(out, (a, b), backward)


def div(a, b) -> Tensor:
    a = astensor(a, b if isinstance(b, Tensor) else None)
    b = astensor(b, a)
    out = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return make_node(out, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    a = astensor(a)
    e = float(exponent)
    out = a.data**e

    def backward(g):
        return (g * e * a.data ** (e - 1.0),)

    return make_node(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    a = astensor(a)
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return make_node(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    a = astensor(a)
    out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return make_node(out, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    a = astensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / out,)

    return make_node(out, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    a = astensor(a)
    out = np.abs(a.data)

    def backward(g):
        return (g * np.sign(a.data),)

    return make_node(out, (a,), backward)


def maximum(a, b) -> Tensor:
    """Elementwise max; at ties the gradient routes to the first operand."""
    a = astensor(a, b if isinstance(b, Tensor) else None)
    b = astensor(b, a)
    out = np.maximum(a.data, b.data)
    mask = a.data >= b.data

    def backward(g):
        return (
            _unbroadcast(g * mask, a.data.shape),
            _unbroadcast(g * (~mask), b.data.shape),
        )

    return make_node(out, (a, b), backward)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    a = astensor(a)
    mask = a.data > 0
    out = np.where(mask, a.data, slope * a.data)

    def backward(g):
        return (g * np.where(mask, 1.0, slope),)

    return make_node(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    a = astensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return make_node(out, (a,), backward)


def stop_gradient(a: Tensor) -> Tensor:
    """Constant view of ``a``: blocks gradient flow."""
    return Tensor(a.data)


# ----------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------

def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    axes = _normalize_axes(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return make_node(out, (a,), backward)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    axes = _normalize_axes(axis, a.data.ndim)
    count = int(np.prod([a.data.shape[ax] for ax in axes])) if axes else 1
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def tensor_max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; gradient routes to the first occurrence of the max."""
    a = astensor(a)
    if axis is None:
        out = a.data.max(keepdims=keepdims)
        flat_idx = int(np.argmax(a.data))

        def backward_all(g):
            grad = np.zeros_like(a.data)
            grad.reshape(-1)[flat_idx] = np.asarray(g).reshape(-1)[0]
            return (grad,)

        return make_node(out, (a,), backward_all)

    ax = axis % a.data.ndim
    out = a.data.max(axis=ax, keepdims=keepdims)
    idx = np.argmax(a.data, axis=ax)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, np.expand_dims(idx, ax), 1.0, axis=ax)
        return (grad * g,)

    return make_node(out, (a,), backward)


# ----------------------------------------------------------------------
# shape manipulation
# ----------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    a = astensor(a)
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.data.shape),)

    return make_node(out, (a,), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    a = astensor(a)
    out = a.data.transpose(axes)
    if axes is None:
        inverse = None
    else:
        inverse = np.argsort(axes)

    def backward(g):
        return (g.transpose(inverse),)

    return make_node(out, (a,), backward)


def _is_basic_index(key) -> bool:
    items = key if isinstance(key, tuple) else (key,)
    return all(
        isinstance(k, (int, np.integer, slice, type(Ellipsis), type(None)))
        for k in items
    )


def take(a: Tensor, key) -> Tensor:
    """Indexing/slicing; advanced (array) indices scatter-add on backward."""
    a = astensor(a)
    out = a.data[key]
    basic = _is_basic_index(key)

    def backward(g):
        grad = np.zeros_like(a.data)
        if basic:
            grad[key] += g
        else:
            np.add.at(grad, key, g)
        return (grad,)

    return make_node(np.array(out) if np.isscalar(out) else out, (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [astensor(t) for t in tensors]
    if not parts:
        raise ValueError("concat requires at least one tensor")
    ax = axis % parts[0].data.ndim
    for t in parts[1:]:
        if t.data.ndim != parts[0].data.ndim:
            raise ShapeError(
                f"concat rank mismatch: {t.data.shape} vs {parts[0].data.shape}"
            )
    out = np.concatenate([t.data for t in parts], axis=ax)
    sizes = [t.data.shape[ax] for t in parts]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=ax))

    return make_node(out, tuple(parts), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching semantics (2-D or stacked)."""
    a = astensor(a)
    b = astensor(b)
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return make_node(out, (a, b), backward)
