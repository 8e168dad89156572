"""Dense tensors with define-by-run reverse-mode differentiation.

Every operation records its inputs and a backward rule on the output tensor.
Calling :func:`backward` on a scalar walks that record in reverse topological
order, so the "tape" is simply the graph reachable from the loss.  Grad mode
and the working precision are thread local: a tape never crosses workers.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, DomainError, NonFiniteError, ShapeError

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Run tensor arithmetic in ``dtype`` (float32 by default) in this thread."""
    prev = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")
    __array_ufunc__ = None  # make numpy defer to the reflected Tensor operators

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=default_dtype())
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    # -- plain accessors -------------------------------------------------
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ----------------------------------------------------
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axes=None, keepdims=False):
        return reduce("sum", self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce("mean", self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap the output of an operation and, in grad mode, link it into the graph.

    ``backward_fn`` maps the upstream gradient to one gradient (or None) per parent.
    """
    # one reduction catches NaN/Inf; re-check elementwise only to rule out sum overflow
    with np.errstate(over="ignore", invalid="ignore"):
        total = np.sum(data)
    if not np.isfinite(total) and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=default_dtype())
    out.grad = None
    out.op = op
    out.requires_grad = _grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _topological(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad tensor reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` buffers, so a tensor used by
    several consumers (or across several backward calls) receives their sum.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    seed = np.ones_like(loss.data)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for node in reversed(_topological(loss)):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=parent.data.dtype)
            if g.shape != parent.shape:
                g = g.reshape(parent.shape)
            # gradient buffers are never updated in place, so sharing g is safe
            parent.grad = g if parent.grad is None else parent.grad + g
        # non-leaf: release the graph once its gradient has been pushed upstream
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} are not broadcastable") from None


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of right-aligned broadcasting)."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary(a, b)
    return make_result(a.data + b.data, (a, b),
                       lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)
    return make_result(a.data - b.data, (a, b),
                       lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)
    return make_result(a.data * b.data, (a, b),
                       lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
                       "mul")


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    if np.any(b.data == 0):
        raise DomainError("div: divisor (second operand) contains zero")
    out = a.data / b.data

    def bw(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return make_result(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def absolute(a) -> Tensor:
    """|a|, with subgradient 0 at 0."""
    a = as_tensor(a)
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: operand contains non-positive values")
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(exponent, Tensor):
        raise ContractError("pow: exponent must be a scalar")
    exponent = float(exponent)
    if exponent != int(exponent) and np.any(a.data < 0):
        raise DomainError("pow: negative base with non-integer exponent")
    if exponent < 0 and np.any(a.data == 0):
        raise DomainError("pow: zero base with negative exponent")
    out = a.data ** exponent

    def bw(g):
        if exponent == 0:
            return (np.zeros_like(a.data),)
        return (g * exponent * a.data ** (exponent - 1),)

    return make_result(out, (a,), bw, "pow")


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip into [lo, hi]; the gradient is zero wherever clipping was active."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    keep = np.ones(a.shape, dtype=bool)
    if lo is not None:
        keep &= a.data >= lo
    if hi is not None:
        keep &= a.data <= hi
    return make_result(out, (a,), lambda g: (g * keep,), "clamp")


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div, "pow": power,
    "abs": absolute, "exp": exp, "log": log,
}


def elementwise(kind: str, a, b=None, **kwargs) -> Tensor:
    """Dispatch by name: add, sub, mul, div, pow take a second operand; abs, exp,
    log are unary; clamp takes ``lo``/``hi``."""
    if kind == "clamp":
        return clamp(a, **kwargs)
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {kind!r}") from None
    if kind in ("abs", "exp", "log"):
        return fn(a)
    return fn(a, b)


# ---------------------------------------------------------------------------
# linear algebra, reductions, shape ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return make_result(a.data @ b.data, (a, b),
                       lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ContractError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def reduce(kind: str, a, axes=None, keepdims: bool = False) -> Tensor:
    """sum, mean, var_biased (population variance) or max over ``axes``.

    ``max`` is treated as a constant by the backward pass.
    """
    a = as_tensor(a)
    ax = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in ax])) if ax else 1
    if count == 0:
        raise DomainError(f"{kind}: empty reduction extent")
    kept_shape = tuple(1 if i in ax else n for i, n in enumerate(a.shape))

    def expand(g):
        return np.broadcast_to(g.reshape(kept_shape), a.shape)

    if kind == "sum":
        out = a.data.sum(axis=ax, keepdims=keepdims)
        return make_result(out, (a,), lambda g: (expand(g),), "sum")
    if kind == "mean":
        out = a.data.mean(axis=ax, keepdims=keepdims)
        return make_result(out, (a,), lambda g: (expand(g) / count,), "mean")
    if kind == "var_biased":
        mu = a.data.mean(axis=ax, keepdims=True)
        centered = a.data - mu
        out = (centered * centered).mean(axis=ax, keepdims=keepdims)
        return make_result(out, (a,), lambda g: (expand(g) * centered * (2.0 / count),), "var")
    if kind == "max":
        out = a.data.max(axis=ax, keepdims=keepdims)
        return make_result(out, (), lambda g: (), "max")
    raise ContractError(f"unknown reduction {kind!r}")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return make_result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, index) -> Tensor:
    """Basic (slice/int) indexing; the backward pass scatters into zeros."""
    a = as_tensor(a)
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return make_result(np.array(out), (a,), bw, "getitem")


def roll(a, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    """Circular shift; a permutation, so its backward pass is the reverse shift."""
    a = as_tensor(a)
    shifts, axes = tuple(shifts), tuple(axes)
    back = tuple(-s for s in shifts)
    return make_result(np.roll(a.data, shifts, axes), (a,), lambda g: (np.roll(g, back, axes),), "roll")


def norm2(a) -> Tensor:
    """Euclidean norm of all elements, with subgradient 0 at the origin."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum())

    def bw(g):
        if out == 0:
            return (np.zeros_like(a.data),)
        return (g * a.data / out,)

    return make_result(out, (a,), bw, "norm2")


def concatenate(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_result(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")
