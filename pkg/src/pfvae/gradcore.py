"""Minimal reverse-mode gradient engine over float64 numpy arrays.

Graphs are built define-by-run: every operation returns a new :class:`Node`
holding its value, its parents and a vector-Jacobian rule.  :func:`backward`
walks the graph in reverse topological order and accumulates gradients.

Binary operations require equal shapes.  The only broadcasting allowed is a
size-1 operand against an arbitrary tensor.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


def as_tensor(x) -> Tensor:
    arr = np.array(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains NaN or Inf")
    return arr


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "parents", "vjp", "op", "grad", "trainable")

    def __init__(self, value, parents: Sequence["Node"] = (), vjp=None, op: str = "const"):
        self.value = value
        self.parents = tuple(parents)
        # vjp(upstream) -> tuple of gradients, one per parent
        self.vjp = vjp
        self.op = op
        self.grad = None
        self.trainable = False

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __neg__ = lambda self: neg(self)


class Parameter(Node):
    """A named trainable leaf.  The optimizer replaces ``value`` between steps."""

    __slots__ = ("name",)

    def __init__(self, name: str, value):
        super().__init__(as_tensor(value), op="param")
        self.name = name
        self.trainable = True

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def constant(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(as_tensor(x))


def _make(value, parents, vjp, op) -> Node:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op}: forward value contains NaN or Inf")
    return Node(value, parents, vjp, op)


# Vector-Jacobian rules live in a registry so a test hook can corrupt one.
VJP_SCALE: dict[str, float] = {}


@contextlib.contextmanager
def corrupt_rule(op: str, scale: float = 1.5):
    """Scale the backward rule of ``op`` (negative control for gradient checks)."""
    previous = VJP_SCALE.get(op)
    VJP_SCALE[op] = scale
    try:
        yield
    finally:
        if previous is None:
            VJP_SCALE.pop(op, None)
        else:
            VJP_SCALE[op] = previous


def _scaled(op: str, g):
    s = VJP_SCALE.get(op)
    return g if s is None else g * s


# ---------------------------------------------------------------- binary ops


def _binary_shapes(op: str, a: Node, b: Node):
    sa, sb = a.value.shape, b.value.shape
    if sa == sb or a.value.size == 1 or b.value.size == 1:
        return
    raise ShapeError(f"{op}: shape mismatch {sa} vs {sb}")


def _unbroadcast(g: Tensor, like: Tensor) -> Tensor:
    if g.shape == like.shape:
        return g
    # size-1 operand that was broadcast
    return np.reshape(np.sum(g), like.shape)


def add(a, b) -> Node:
    a, b = constant(a), constant(b)
    _binary_shapes("add", a, b)

    def vjp(g):
        g = _scaled("add", g)
        return _unbroadcast(g, a.value), _unbroadcast(g, b.value)

    return _make(a.value + b.value, (a, b), vjp, "add")


def sub(a, b) -> Node:
    a, b = constant(a), constant(b)
    _binary_shapes("sub", a, b)

    def vjp(g):
        g = _scaled("sub", g)
        return _unbroadcast(g, a.value), _unbroadcast(-g, b.value)

    return _make(a.value - b.value, (a, b), vjp, "sub")


def mul(a, b) -> Node:
    a, b = constant(a), constant(b)
    _binary_shapes("mul", a, b)

    def vjp(g):
        g = _scaled("mul", g)
        return _unbroadcast(g * b.value, a.value), _unbroadcast(g * a.value, b.value)

    return _make(a.value * b.value, (a, b), vjp, "mul")


def div(a, b) -> Node:
    a, b = constant(a), constant(b)
    _binary_shapes("div", a, b)
    if np.any(b.value == 0):
        raise DomainError("div: division by zero")
    out = a.value / b.value

    def vjp(g):
        g = _scaled("div", g)
        return (
            _unbroadcast(g / b.value, a.value),
            _unbroadcast(-g * out / b.value, b.value),
        )

    return _make(out, (a, b), vjp, "div")


def matmul(a, b) -> Node:
    a, b = constant(a), constant(b)
    sa, sb = a.value.shape, b.value.shape
    if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0]:
        raise ShapeError(f"matmul: cannot multiply {sa} by {sb}")

    def vjp(g):
        g = _scaled("matmul", g)
        return g @ b.value.T, a.value.T @ g

    return _make(a.value @ b.value, (a, b), vjp, "matmul")


# ----------------------------------------------------------------- unary ops


def neg(a) -> Node:
    a = constant(a)
    return _make(-a.value, (a,), lambda g: (-_scaled("neg", g),), "neg")


def square(a) -> Node:
    a = constant(a)
    return _make(a.value * a.value, (a,), lambda g: (_scaled("square", g) * 2.0 * a.value,), "square")


def tanh(a) -> Node:
    a = constant(a)
    t = np.tanh(a.value)
    return _make(t, (a,), lambda g: (_scaled("tanh", g) * (1.0 - t * t),), "tanh")


def exp(a) -> Node:
    a = constant(a)
    with np.errstate(over="ignore"):
        e = np.exp(a.value)
    return _make(e, (a,), lambda g: (_scaled("exp", g) * e,), "exp")


def log(a) -> Node:
    a = constant(a)
    if np.any(a.value <= 0):
        raise DomainError("log: operand has non-positive entries")
    return _make(np.log(a.value), (a,), lambda g: (_scaled("log", g) / a.value,), "log")


def sigmoid(a) -> Node:
    a = constant(a)
    # 0.5 * (1 + tanh(x/2)) avoids overflow in exp(-x)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(s, (a,), lambda g: (_scaled("sigmoid", g) * s * (1.0 - s),), "sigmoid")


def softplus(a) -> Node:
    a = constant(a)
    out = np.logaddexp(0.0, a.value)
    slope = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(out, (a,), lambda g: (_scaled("softplus", g) * slope,), "softplus")


def clip(a, lo: float | None = None, hi: float | None = None) -> Node:
    """Clamp to [lo, hi]; the gradient is zero where clamping is active."""
    a = constant(a)
    out = np.clip(a.value, lo, hi)
    passes = np.ones_like(a.value)
    if lo is not None:
        passes = passes * (a.value >= lo)
    if hi is not None:
        passes = passes * (a.value <= hi)
    return _make(out, (a,), lambda g: (_scaled("clip", g) * passes,), "clip")


ELEMENTWISE: dict[str, Callable[..., Node]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "neg": neg,
    "square": square,
    "sigmoid": sigmoid,
    "softplus": softplus,
}


def elementwise(op: str, *operands) -> Node:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# ---------------------------------------------------------------- reductions


def _check_axis(x: Node, axis):
    if axis is not None and not -x.value.ndim <= axis < x.value.ndim:
        raise ValueError(f"invalid axis {axis} for shape {x.value.shape}")


def sum(x, axis: int | None = None) -> Node:  # noqa: A001
    x = constant(x)
    _check_axis(x, axis)
    shape = x.value.shape

    def vjp(g):
        g = _scaled("sum", g)
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(x.value, axis=axis), (x,), vjp, "sum")


def mean(x, axis: int | None = None) -> Node:
    x = constant(x)
    _check_axis(x, axis)
    shape = x.value.shape
    n = x.value.size if axis is None else shape[axis]

    def vjp(g):
        g = _scaled("mean", g) / n
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.mean(x.value, axis=axis), (x,), vjp, "mean")


def reduce(op: str, x, axis: int | None = None) -> Node:
    if op == "sum":
        return sum(x, axis)
    if op == "mean":
        return mean(x, axis)
    raise ValueError(f"unknown reduction {op!r}")


# ------------------------------------------------------------------ backward


def _topological(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node, params: Iterable[Parameter] | None = None) -> dict[Parameter, Tensor]:
    """Accumulate d(loss)/d(node) into ``node.grad`` for every reachable node.

    Returns a mapping from each reachable trainable :class:`Parameter` to its
    gradient.  When ``params`` is given, exactly those parameters are returned,
    with zero gradients for the unreachable ones.
    """
    if loss.value.size != 1 or loss.value.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = _topological(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64).reshape(parent.value.shape)
            else:
                parent.grad = parent.grad + g
    if params is None:
        return {n: n.grad for n in order if n.trainable}
    reached = {id(n) for n in order}
    return {p: p.grad if id(p) in reached else np.zeros_like(p.value) for p in params}


# ------------------------------------------------------------ gradient check


def finite_diff_errors(
    f: Callable[[], Node],
    params: Sequence[Parameter],
    step: float = 1e-5,
) -> dict[str, float]:
    """Per-parameter max of |analytic - central difference| / max(1, |analytic|).

    ``f`` rebuilds the loss graph from the current parameter values.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = backward(f(), params)
    errors = {}
    for p in params:
        base = p.value
        grad = analytic[p]
        worst = 0.0
        for idx in np.ndindex(base.shape):
            plus = base.copy()
            plus[idx] += step
            p.value = plus
            f_plus = float(f().value)
            minus = base.copy()
            minus[idx] -= step
            p.value = minus
            f_minus = float(f().value)
            p.value = base
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(grad[idx] - numeric) / max(1.0, abs(grad[idx]))
            worst = max(worst, err)
        errors[p.name] = worst
    return errors


def finite_diff_check(f: Callable[[], Node], params: Sequence[Parameter], step: float = 1e-5) -> float:
    errors = finite_diff_errors(f, params, step)
    return max(errors.values(), default=0.0)
