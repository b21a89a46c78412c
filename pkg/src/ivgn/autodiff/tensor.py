"""Reverse-mode differentiable n-d arrays.

Every operation that involves a tensor with ``requires_grad`` records a
:class:`Node` carrying a monotonically increasing index.  ``backward`` walks
the nodes reachable from the loss in strictly decreasing index order, i.e.
exactly the reverse of execution order, and then releases them: a graph can
be differentiated once.
"""

from __future__ import annotations

import itertools
import threading
import weakref
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from ivgn.errors import DimensionError, DomainError, GraphError, UsageError

_state = threading.local()
_node_counter = itertools.count()
_default_dtype = np.float64


def set_default_dtype(dtype) -> None:
    """Switch between the float64 oracle build and float32 training."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Node:
    """One recorded primitive: op kind, inputs, and the closure computing input grads."""

    __slots__ = ("index", "op", "inputs", "backward_fn", "output", "grad", "consumed")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.index = next(_node_counter)
        self.op = op
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn
        self.output = None
        self.grad = None
        self.consumed = False

    def __repr__(self):
        return f"Node({self.op}#{self.index})"


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or _default_dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._node: Optional[Node] = None
        self.name = name

    # --- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
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
    def values(self) -> np.ndarray:
        """Flat view of the elements in row-major order."""
        return self.data.reshape(-1)

    @property
    def node(self) -> Optional[Node]:
        return self._node

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})\n{self.data!r}"

    def __len__(self):
        return self.shape[0]

    # --- graph ---------------------------------------------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        seed = np.ones_like(self.data)
        if self._node is None:
            if self.requires_grad:
                self.grad = seed if self.grad is None else self.grad + seed
            return
        nodes = _collect(self._node)
        nodes.sort(key=lambda n: n.index, reverse=True)
        self._node.grad = seed
        for node in nodes:
            g = node.grad
            if g is None:
                continue
            out = node.output()
            if out is not None:
                out.grad = g
            input_grads = node.backward_fn(g)
            for inp, ig in zip(node.inputs, input_grads):
                if ig is None or not inp.requires_grad:
                    continue
                parent = inp._node
                if parent is not None:
                    parent.grad = ig if parent.grad is None else parent.grad + ig
                else:
                    inp.grad = ig.copy() if inp.grad is None else inp.grad + ig
        for node in nodes:
            node.consumed = True
            node.backward_fn = None
            node.grad = None

    # --- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        from ivgn.autodiff.functional import matmul

        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def var(self, axis=None, keepdims=False):
        return var(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return abs_(self)

    def sqrt(self):
        return sqrt(self)


def _collect(root: Node) -> list:
    seen = {id(root)}
    stack = [root]
    out = []
    while stack:
        node = stack.pop()
        if node.consumed:
            raise GraphError(
                "graph already consumed by a previous backward(); re-run the forward pass"
            )
        out.append(node)
        for inp in node.inputs:
            parent = inp._node
            if parent is not None and id(parent) not in seen:
                seen.add(id(parent))
                stack.append(parent)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], op: str, backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._node = None
    out.requires_grad = False
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(op, inputs, backward_fn)
        node.output = weakref.ref(out)
        out._node = node
    return out


# --- broadcasting --------------------------------------------------------
def broadcast_shape(a: tuple, b: tuple) -> tuple:
    """Right-aligned broadcasting where only size-1 (or missing leading) axes expand."""
    ndim = max(len(a), len(b))
    pa = (1,) * (ndim - len(a)) + tuple(a)
    pb = (1,) * (ndim - len(b)) + tuple(b)
    out = []
    for da, db in zip(pa, pb):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise DimensionError(f"cannot broadcast shapes {tuple(a)} and {tuple(b)}")
    return tuple(out)


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary_inputs(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    return a, b


# --- elementwise ---------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _binary_inputs(a, b)
    sa, sb = a.shape, b.shape
    return make_result(
        a.data + b.data, (a, b), "add", lambda g: (unbroadcast(g, sa), unbroadcast(g, sb))
    )


def sub(a, b) -> Tensor:
    a, b = _binary_inputs(a, b)
    sa, sb = a.shape, b.shape
    return make_result(
        a.data - b.data, (a, b), "sub", lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb))
    )


def mul(a, b) -> Tensor:
    a, b = _binary_inputs(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (
            unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_result(ad * bd, (a, b), "mul", backward)


def _check_domain(op: str, bad: np.ndarray, values: np.ndarray):
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DomainError(op, idx, float(values[idx]))


def div(a, b) -> Tensor:
    a, b = _binary_inputs(a, b)
    ad, bd = a.data, b.data
    _check_domain("div", bd == 0, bd)
    out = ad / bd

    def backward(g):
        return (
            unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return make_result(out, (a, b), "div", backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), "neg", lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), "exp", lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    _check_domain("log", ~(x > 0), x)
    return make_result(np.log(x), (a,), "log", lambda g: (g / x,))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_np(a.data)
    return make_result(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_result(a.data * mask, (a,), "relu", lambda g: (g * mask,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return make_result(np.abs(a.data), (a,), "abs", lambda g: (g * sign,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    _check_domain("sqrt", x < 0, x)
    out = np.sqrt(x)
    return make_result(out, (a,), "sqrt", lambda g: (g * 0.5 / out,))


def pow_scalar(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return make_result(
        x**exponent, (a,), "pow", lambda g: (g * exponent * x ** (exponent - 1),)
    )


# --- reductions ----------------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _expand_reduced(g: np.ndarray, shape: tuple, axes: tuple, keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)
    return make_result(
        np.asarray(out), (a,), "sum", lambda g: (_expand_reduced(g, shape, axes, keepdims),)
    )


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    count = int(np.prod([shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)
    return make_result(
        np.asarray(out),
        (a,),
        "mean",
        lambda g: (_expand_reduced(g, shape, axes, keepdims) / count,),
    )


def var(a, axis=None, keepdims=False) -> Tensor:
    """Population (divide-by-M) variance."""
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    count = int(np.prod([shape[i] for i in axes])) if axes else 1
    centered = a.data - a.data.mean(axis=axes, keepdims=True)
    out = (centered * centered).mean(axis=axes, keepdims=keepdims)
    return make_result(
        np.asarray(out),
        (a,),
        "var",
        lambda g: (_expand_reduced(g, shape, axes, keepdims) * (2.0 / count) * centered,),
    )


# --- shape ---------------------------------------------------------------
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} into {tuple(shape)}") from exc
    return make_result(out, (a,), "reshape", lambda g: (g.reshape(src),))


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"invalid permutation {axes} for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return make_result(
        np.transpose(a.data, axes), (a,), "permute", lambda g: (np.transpose(g, inverse),)
    )


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.data.dtype

    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_result(np.asarray(a.data[index]), (a,), "getitem", backward)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None))) or i is Ellipsis for i in items)
