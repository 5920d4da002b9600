# src/core_services/tensor_core.py
"""
Dense float64 arrays with reverse-mode differentiation.

Every op evaluates eagerly with numpy. When one of its inputs needs a gradient
the output remembers those inputs and a backward rule; ``ComputationRecord``
puts the reachable nodes in topological order and ``backward`` walks that
order exactly once in reverse.

Op vocabulary: add, sub, mul, div, scale, neg, tanh, sigmoid, exp, log, abs,
clamp_min, matmul, transpose, reshape, concatenate, reduce_sum, take,
softmax_rows, constant. Everything else (mean, relu, max-pooling,
convolution, log-softmax) is composed from these.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass

import numpy as np

from config import DCC_DEBUG_NANS
from utils.exceptions import ContractError, DimensionError, NumericalError


class _Mode(threading.local):
    grad_enabled = True


_mode = _Mode()
_debug = {"nans": DCC_DEBUG_NANS}


def set_debug_nans(enabled: bool) -> None:
    """Turn the after-every-op NaN/Inf guard on or off."""
    _debug["nans"] = bool(enabled)


def debug_nans_enabled() -> bool:
    return _debug["nans"]


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording anything for backward (evaluation, visualization)."""
    previous = _mode.grad_enabled
    _mode.grad_enabled = False
    try:
        yield
    finally:
        _mode.grad_enabled = previous


class Tensor:
    """A float64 array, optionally tracked for reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_inputs", "_backward")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        array = np.array(data, dtype=np.float64)
        if any(extent <= 0 for extent in array.shape):
            raise DimensionError("tensor extents must be positive", array.shape)
        self.data = array
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = "leaf"
        self._inputs = ()
        self._backward = None

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
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(ComputationRecord.trace(self), self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)


def constant(value) -> Tensor:
    """Embed a fixed array; it never receives a gradient."""
    if isinstance(value, Tensor):
        return Tensor(value.data, requires_grad=False)
    return Tensor(value, requires_grad=False)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else constant(value)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward_rule, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data, dtype=np.float64)
    out.grad = None
    out.name = None
    out.op = op
    tracked = _mode.grad_enabled and any(t.requires_grad for t in inputs)
    out.requires_grad = tracked
    out._inputs = inputs if tracked else ()
    out._backward = backward_rule if tracked else None
    if _debug["nans"] and not np.all(np.isfinite(out.data)):
        raise NumericalError(f"non-finite values produced by '{op}' (shape {out.data.shape})")
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: operands do not broadcast", a.shape, b.shape) from None


# --- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _result(a.data + b.data, (a, b), rule, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _result(a.data - b.data, (a, b), rule, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _result(a.data * b.data, (a, b), rule, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def rule(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)
    return _result(out, (a, b), rule, "div")


def scale(t, factor: float) -> Tensor:
    t = as_tensor(t)
    factor = float(factor)

    def rule(g):
        return (g * factor,)
    return _result(t.data * factor, (t,), rule, "scale")


def neg(t) -> Tensor:
    return scale(t, -1.0)


def tanh(t) -> Tensor:
    t = as_tensor(t)
    out = np.tanh(t.data)

    def rule(g):
        return (g * (1.0 - out * out),)
    return _result(out, (t,), rule, "tanh")


def sigmoid(t) -> Tensor:
    t = as_tensor(t)
    out = 0.5 * (1.0 + np.tanh(0.5 * t.data))

    def rule(g):
        return (g * out * (1.0 - out),)
    return _result(out, (t,), rule, "sigmoid")


def exp(t) -> Tensor:
    t = as_tensor(t)
    out = np.exp(t.data)

    def rule(g):
        return (g * out,)
    return _result(out, (t,), rule, "exp")


def log(t) -> Tensor:
    t = as_tensor(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(t.data)

    def rule(g):
        return (g / t.data,)
    return _result(out, (t,), rule, "log")


def abs_(t) -> Tensor:
    t = as_tensor(t)

    def rule(g):
        return (g * np.sign(t.data),)
    return _result(np.abs(t.data), (t,), rule, "abs")


def clamp_min(t, lower: float) -> Tensor:
    t = as_tensor(t)
    passes = t.data > lower

    def rule(g):
        return (g * passes,)
    return _result(np.maximum(t.data, lower), (t,), rule, "clamp_min")


def relu(t) -> Tensor:
    t = as_tensor(t)
    return mul(t, constant(t.data > 0.0))


# --- linear algebra and layout -----------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast like numpy."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul: inner extents differ", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError("matmul: batch extents do not broadcast", a.shape, b.shape) from None

    def rule(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _result(np.matmul(a.data, b.data), (a, b), rule, "matmul")


def transpose(t, axes: tuple[int, ...] | None = None) -> Tensor:
    """Materialized axis permutation; by default swaps the last two axes."""
    t = as_tensor(t)
    if axes is None:
        if t.ndim < 2:
            raise DimensionError("transpose needs at least two axes", t.shape)
        axes = tuple(range(t.ndim - 2)) + (t.ndim - 1, t.ndim - 2)
    axes = tuple(int(a) % t.ndim for a in axes)
    if sorted(axes) != list(range(t.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation", t.shape)
    inverse = tuple(int(i) for i in np.argsort(axes))

    def rule(g):
        return (np.transpose(g, inverse),)
    return _result(np.transpose(t.data, axes), (t,), rule, "transpose")


def reshape(t, shape) -> Tensor:
    t = as_tensor(t)
    try:
        out = np.reshape(t.data, shape)
    except ValueError:
        raise DimensionError(f"reshape to {tuple(shape)} impossible", t.shape) from None

    def rule(g):
        return (np.reshape(g, t.shape),)
    return _result(out, (t,), rule, "reshape")


def concatenate(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("concatenate: extents differ off the joined axis", *(t.shape for t in tensors)) from None
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, cuts, axis=axis))
    return _result(out, tensors, rule, "concatenate")


def reduce_sum(t, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    out = np.sum(t.data, axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, t.shape).copy(),)
    return _result(out, (t,), rule, "reduce_sum")


def row_sum(t) -> Tensor:
    return reduce_sum(t, axis=-1, keepdims=True)


def col_sum(t) -> Tensor:
    return reduce_sum(t, axis=-2, keepdims=True)


def mean(t, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    count = t.size if axis is None else int(np.prod([t.shape[a] for a in np.atleast_1d(axis)]))
    return scale(reduce_sum(t, axis=axis, keepdims=keepdims), 1.0 / count)


def take(t, indices, axis: int = 0) -> Tensor:
    """Gather along one axis (numpy ``take``); repeated indices accumulate in backward."""
    t = as_tensor(t)
    index = np.asarray(indices, dtype=np.intp)
    axis = int(axis) % t.ndim
    try:
        out = np.take(t.data, index, axis=axis)
    except IndexError:
        raise DimensionError(f"take: index out of range on axis {axis}", t.shape, index.shape) from None

    def rule(g):
        full = np.zeros(t.shape)
        np.add.at(full, (slice(None),) * axis + (index,), g)
        return (full,)
    return _result(out, (t,), rule, "take")


def softmax_rows(m) -> Tensor:
    """Normalize the last axis with exp-normalize after subtracting the row max."""
    m = as_tensor(m)
    shifted = m.data - np.max(m.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def rule(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)
    return _result(out, (m,), rule, "softmax_rows")


# --- recording and reverse traversal -----------------------------------------

@dataclass(frozen=True)
class OpNode:
    output: Tensor
    inputs: tuple[Tensor, ...]
    op: str


class ComputationRecord:
    """Topologically ordered nodes that a scalar depends on."""

    def __init__(self, nodes):
        self.nodes: tuple[OpNode, ...] = tuple(nodes)

    @classmethod
    def trace(cls, root: Tensor) -> "ComputationRecord":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._inputs):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(OpNode(t, t._inputs, t.op) for t in order)

    @property
    def leaves(self) -> list[Tensor]:
        return [n.output for n in self.nodes if n.output._backward is None]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(record: ComputationRecord | None, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) for every tracked leaf; also stored on ``leaf.grad``."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires a gradient")
    if record is None:
        record = ComputationRecord.trace(loss)

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict[Tensor, np.ndarray] = {}
    for node in reversed(record.nodes):
        g = pending.pop(id(node.output), None)
        if g is None:
            continue
        if node.output._backward is None:
            node.output.grad = np.array(g, dtype=np.float64)
            leaf_grads[node.output] = node.output.grad
            continue
        for source, source_grad in zip(node.inputs, node.output._backward(g)):
            if source_grad is None or not source.requires_grad:
                continue
            key = id(source)
            pending[key] = pending[key] + source_grad if key in pending else source_grad
    return leaf_grads
