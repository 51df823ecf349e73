"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Only the operations needed by the MLP heads and the training losses are
provided. Broadcasting is restricted to scalar-tensor and row-vector bias
addition so every backward rule stays small.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

EPS = 1e-12

_grad_enabled = True


class NumericError(ArithmeticError):
    """Raised when an operation produces a non-finite value."""


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block; results are constants."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._consumed = False
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite output in {op}")
    return data


# ----------------------------------------------------------------------
# binary ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        mode = "same"
    elif b.ndim == 0:
        mode = "scalar_b"
    elif a.ndim == 0:
        return add(b, a)
    elif a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        mode = "row"
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            if mode == "same":
                b._accumulate(g)
            elif mode == "scalar_b":
                b._accumulate(np.asarray(g.sum()))
            else:
                b._accumulate(g.sum(axis=0))

    return _make(a.data + b.data, (a, b), "add", bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and b.ndim != 0:
        if a.ndim == 0:
            return mul(b, a)
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    scalar_b = a.shape != b.shape

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            ga = g * a.data
            b._accumulate(np.asarray(ga.sum()) if scalar_b else ga)

    return _make(a.data * b.data, (a, b), "mul", bw)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), "matmul", bw)


# ----------------------------------------------------------------------
# unary elementwise ops


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), "negate", lambda g: a._accumulate(-g))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), "scale", lambda g: a._accumulate(g * c))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out = _check_finite(np.exp(a.data), "exp")
    return _make(out, (a,), "exp", lambda g: a._accumulate(g * out))


def log(a, eps: float = EPS) -> Tensor:
    """Natural log with inputs clamped at ``eps``; clamped entries get zero gradient."""
    a = _as_tensor(a)
    x = np.maximum(a.data, eps)
    live = a.data > eps
    out = _check_finite(np.log(x), "log")
    return _make(out, (a,), "log", lambda g: a._accumulate(np.where(live, g / x, 0.0)))


def sqrt(a, eps: float = EPS) -> Tensor:
    """Square root; the forward value is exact on [0, inf) and the derivative is
    evaluated at ``max(x, eps)`` so underflowed inputs keep a finite gradient.
    Non-positive inputs map to 0 with zero gradient."""
    a = _as_tensor(a)
    x = a.data
    live = x > 0
    out = _check_finite(np.sqrt(np.maximum(x, 0.0)), "sqrt")

    def bw(g):
        a._accumulate(np.where(live, 0.5 * g / np.sqrt(np.maximum(x, eps)), 0.0))

    return _make(out, (a,), "sqrt", bw)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), "sigmoid", lambda g: a._accumulate(g * out * (1.0 - out)))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), "relu", lambda g: a._accumulate(g * mask))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        a._accumulate(g * (cdf + x * pdf))

    return _make(out, (a,), "gelu", bw)


def clip(a, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    out = np.clip(a.data, lo, hi)
    return _make(out, (a,), "clip", lambda g: a._accumulate(g * inside))


# ----------------------------------------------------------------------
# reductions and shape ops


def _check_axis(a: Tensor, axis) -> None:
    if axis is None:
        if a.data.size == 0:
            raise ShapeError("reduction over an empty tensor")
        return
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {a.shape}")
    if a.shape[axis] == 0:
        raise ShapeError(f"reduction over empty axis {axis} of shape {a.shape}")


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    _check_axis(a, axis)
    out = np.asarray(a.data.sum(axis=axis))

    def bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(out, (a,), "sum", bw)


def mean(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    _check_axis(a, axis)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def max_index(a, axis: int | None = None) -> np.ndarray:
    """Index of the maximum (first one on ties). Not differentiable: returns a plain array."""
    a = _as_tensor(a)
    _check_axis(a, axis)
    return np.argmax(a.data, axis=axis)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return _make(a.data.T, (a,), "transpose", lambda g: a._accumulate(g.T))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    out = a.data.reshape(shape)
    return _make(out, (a,), "reshape", lambda g: a._accumulate(g.reshape(old)))


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, idx, axis=axis)

    def bw(g):
        full = np.zeros(a.shape)
        if axis == 0:
            np.add.at(full, idx, g)
        else:
            np.add.at(full, (slice(None), idx), g)
        a._accumulate(full)

    return _make(out, (a,), "take", bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def bw(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accumulate(g[lo:hi] if axis == 0 else g[:, lo:hi])

    return _make(out, ts, "concat", bw)


def l2_normalize(a, eps: float = EPS) -> Tensor:
    """Scale each row (or a single vector) to unit Euclidean norm.

    The norm is offset by ``eps`` so a zero vector maps to zero instead of
    dividing by zero.
    """
    a = _as_tensor(a)
    x = a.data
    if x.ndim == 1:
        n = np.asarray(np.linalg.norm(x))
    elif x.ndim == 2:
        n = np.linalg.norm(x, axis=1, keepdims=True)
    else:
        raise ShapeError(f"l2_normalize expects 1-D or 2-D input, got {x.shape}")
    d = n + eps
    out = x / d

    def bw(g):
        dot = (x * g).sum(axis=-1, keepdims=x.ndim == 2)
        nn = np.maximum(n, EPS)
        a._accumulate(g / d - x * (dot / (nn * d * d)))

    return _make(out, (a,), "l2_normalize", bw)


# ----------------------------------------------------------------------
# backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
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
        # reversed so parents are visited in insertion order
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

    Intermediate gradients are released afterwards. A second call on the same
    loss raises; parameters not reachable from ``loss`` are left untouched.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward called twice on the same graph")
    if not loss.requires_grad:
        loss._consumed = True
        return
    order = _topo_order(loss)
    loss.grad = np.ones(())
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._backward is not None:
            node.grad = None
            node._backward = None
            node._parents = ()
    loss._consumed = True


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
