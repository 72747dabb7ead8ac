"""
Reverse-mode automatic differentiation over dense float64 arrays.

A ``Variable`` wraps an immutable numpy array (row-major, float64) and records
how it was produced. ``backward()`` on a scalar walks the graph in reverse
topological order and fills ``.grad`` on every node that requires it.

Broadcasting is deliberately narrow: operands must have equal shapes, or one of
them must be a 0-d scalar. Anything else raises ShapeMismatchError.
"""

import contextlib
import threading
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from utils.errors import AxisError, GraphError, ShapeMismatchError

_grad_state = threading.local()

GradFn = Callable[[np.ndarray], np.ndarray]


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (sampling chains, finite differences)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Variable:
    """A node in the computation graph."""

    # numpy must defer to our operators for ``ndarray - Variable``
    __array_ufunc__ = None

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        name: str = "",
        _parents: Tuple[Tuple["Variable", GradFn], ...] = (),
        _op: str = "",
    ):
        self.value = np.array(value, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._op = _op
        self._consumed = False

    # ─────────────────────────── basics ───────────────────────────────────

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeMismatchError("item", self.value.shape, ())
        return float(self.value.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        label = f" '{self.name}'" if self.name else ""
        op = f", op={self._op}" if self._op else ""
        return f"Variable{label}(shape={self.shape}{op}, requires_grad={self.requires_grad})"

    # ─────────────────────────── operators ────────────────────────────────

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
        if not isinstance(other, (int, float, np.floating, np.integer)):
            raise TypeError("Variable division is only defined by a python scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    # ─────────────────────────── backward ─────────────────────────────────

    def backward(self, accumulate: bool = False) -> None:
        """Backpropagate from this scalar.

        Raises GraphError when the graph was already consumed by a previous
        backward, or when a leaf still holds a gradient from an earlier step,
        unless ``accumulate`` is set.
        """
        if self.value.size != 1:
            raise GraphError(f"backward() needs a scalar, got shape {self.shape}")

        order = _topological_order(self)

        if not accumulate:
            for node in order:
                if node._consumed:
                    raise GraphError(
                        "backward() over a graph that was already backpropagated; "
                        "rebuild the graph for the next step"
                    )
                if node.is_leaf and node.requires_grad and node.grad is not None:
                    raise GraphError(
                        f"leaf '{node.name or '?'}' already holds a gradient; call zero_grad() first"
                    )

        grads = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf and accumulate and node.grad is not None:
                node.grad = node.grad + g
            else:
                node.grad = g
            for parent, fn in node._parents:
                if not parent.requires_grad:
                    continue
                pg = fn(g)
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

        for node in order:
            if not node.is_leaf:
                node._consumed = True


def _topological_order(root: Variable) -> List[Variable]:
    order: List[Variable] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


# ─────────────────────────── construction helpers ─────────────────────────

VariableLike = Union[Variable, np.ndarray, float, int]


def constant(value) -> Variable:
    return Variable(value, requires_grad=False)


def parameter(value, name: str = "") -> Variable:
    return Variable(value, requires_grad=True, name=name)


def as_variable(x: VariableLike) -> Variable:
    return x if isinstance(x, Variable) else Variable(x)


def _result(value: np.ndarray, op: str, parents: Sequence[Tuple[Variable, GradFn]]) -> Variable:
    tracked = tuple((p, fn) for p, fn in parents if p.requires_grad)
    if not tracked or not is_grad_enabled():
        return Variable(value, _op=op)
    return Variable(value, requires_grad=True, _parents=tracked, _op=op)


def _broadcast_shape(op: str, a: Variable, b: Variable) -> Tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    if a.ndim == 0:
        return b.shape
    if b.ndim == 0:
        return a.shape
    raise ShapeMismatchError(op, a.shape, b.shape)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=np.float64)


# ─────────────────────────── elementwise ──────────────────────────────────

def add(a: VariableLike, b: VariableLike) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _broadcast_shape("add", a, b)
    return _result(
        a.value + b.value,
        "add",
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
    )


def sub(a: VariableLike, b: VariableLike) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _broadcast_shape("sub", a, b)
    return _result(
        a.value - b.value,
        "sub",
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(-g, b.shape))],
    )


def mul(a: VariableLike, b: VariableLike) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _broadcast_shape("mul", a, b)
    return _result(
        a.value * b.value,
        "mul",
        [
            (a, lambda g: _unbroadcast(g * b.value, a.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.shape)),
        ],
    )


def neg(a: VariableLike) -> Variable:
    a = as_variable(a)
    return _result(-a.value, "neg", [(a, lambda g: -g)])


def exp(a: VariableLike) -> Variable:
    a = as_variable(a)
    out = np.exp(a.value)
    return _result(out, "exp", [(a, lambda g: g * out)])


def log(a: VariableLike) -> Variable:
    a = as_variable(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.value)
    return _result(out, "log", [(a, lambda g: g / a.value)])


def tanh(a: VariableLike) -> Variable:
    a = as_variable(a)
    out = np.tanh(a.value)
    return _result(out, "tanh", [(a, lambda g: g * (1.0 - out * out))])


def softplus(a: VariableLike) -> Variable:
    a = as_variable(a)
    out = np.logaddexp(0.0, a.value)
    return _result(out, "softplus", [(a, lambda g: g * expit(a.value))])


def square(a: VariableLike) -> Variable:
    a = as_variable(a)
    return _result(a.value * a.value, "square", [(a, lambda g: g * 2.0 * a.value)])


def clip(a: VariableLike, lo: float, hi: float) -> Variable:
    """Clamp to [lo, hi]; gradient passes only where the input is inside."""
    a = as_variable(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _result(np.clip(a.value, lo, hi), "clip", [(a, lambda g: g * inside)])


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "softplus": softplus,
    "square": square,
}


def elementwise(op: str, a: VariableLike, b: Optional[VariableLike] = None) -> Variable:
    """Dispatch an elementwise op by name."""
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}")
    fn = _ELEMENTWISE[op]
    if op in ("add", "sub", "mul"):
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return fn(a, b)
    return fn(a)


# ─────────────────────────── linear algebra ───────────────────────────────

def matmul(a: VariableLike, b: VariableLike) -> Variable:
    a, b = as_variable(a), as_variable(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    return _result(
        a.value @ b.value,
        "matmul",
        [(a, lambda g: g @ b.value.T), (b, lambda g: a.value.T @ g)],
    )


def concat(parts: Iterable[VariableLike], axis: int = 1) -> Variable:
    parts = [as_variable(p) for p in parts]
    if not parts:
        raise ShapeMismatchError("concat")
    rank = parts[0].ndim
    _check_axis("concat", axis, rank)
    for p in parts[1:]:
        other = [d for i, d in enumerate(p.shape) if i != axis]
        first = [d for i, d in enumerate(parts[0].shape) if i != axis]
        if p.ndim != rank or other != first:
            raise ShapeMismatchError("concat", parts[0].shape, p.shape)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]
    value = np.concatenate([p.value for p in parts], axis=axis)

    def piece(i: int) -> GradFn:
        return lambda g: np.ascontiguousarray(np.split(g, bounds, axis=axis)[i])

    return _result(value, "concat", [(p, piece(i)) for i, p in enumerate(parts)])


def reshape(a: VariableLike, shape: Tuple[int, ...]) -> Variable:
    a = as_variable(a)
    try:
        value = a.value.reshape(shape)
    except ValueError as e:
        raise ShapeMismatchError("reshape", a.shape, tuple(shape)) from e
    return _result(value, "reshape", [(a, lambda g: g.reshape(a.shape))])


# ─────────────────────────── reductions ───────────────────────────────────

def _check_axis(op: str, axis: Optional[int], rank: int) -> None:
    if axis is None:
        return
    if not (0 <= axis < rank):
        raise AxisError(op, axis, rank)


def _expand_grad(g: np.ndarray, shape: Tuple[int, ...], axis: Optional[int], keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.array(np.broadcast_to(g, shape))


def reduce_sum(a: VariableLike, axis: Optional[int] = None, keepdims: bool = False) -> Variable:
    a = as_variable(a)
    _check_axis("sum", axis, a.ndim)
    value = np.sum(a.value, axis=axis, keepdims=keepdims)
    return _result(value, "sum", [(a, lambda g: _expand_grad(g, a.shape, axis, keepdims))])


def reduce_mean(a: VariableLike, axis: Optional[int] = None, keepdims: bool = False) -> Variable:
    a = as_variable(a)
    _check_axis("mean", axis, a.ndim)
    count = a.size if axis is None else a.shape[axis]
    value = np.mean(a.value, axis=axis, keepdims=keepdims)
    return _result(
        value, "mean", [(a, lambda g: _expand_grad(g, a.shape, axis, keepdims) / count)]
    )


def reduce_max(a: VariableLike, axis: Optional[int] = None, keepdims: bool = False) -> Variable:
    """Max reduction; the gradient goes to the first maximal index."""
    a = as_variable(a)
    _check_axis("max", axis, a.ndim)
    value = np.max(a.value, axis=axis, keepdims=keepdims)

    def grad_fn(g: np.ndarray) -> np.ndarray:
        mask = np.zeros_like(a.value)
        if axis is None:
            mask.reshape(-1)[int(np.argmax(a.value))] = 1.0
            return mask * g
        idx = np.expand_dims(np.argmax(a.value, axis=axis), axis)
        np.put_along_axis(mask, idx, 1.0, axis=axis)
        return mask * _expand_grad(g, a.shape, axis, keepdims)

    return _result(value, "max", [(a, grad_fn)])


max_over_axis = reduce_max


def reduce(op: str, a: VariableLike, axis: Optional[int] = None, keepdims: bool = False) -> Variable:
    table = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max, "max_over_axis": reduce_max}
    if op not in table:
        raise ValueError(f"unknown reduction {op!r}")
    return table[op](a, axis=axis, keepdims=keepdims)
