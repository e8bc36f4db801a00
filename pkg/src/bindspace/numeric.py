"""Dense matrix values with reverse-mode differentiation.

A ``Matrix`` is a 2-D float64 numpy array. Graph nodes wrap a forward value
and, once ``backward`` has run, an adjoint of the same shape. Every public
operation checks that its result is finite.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from bindspace.errors import ContractError, DegenerateInputError, DimensionError, NumericError

Matrix = np.ndarray

NORM_FLOOR = 1e-12

ACTIVATIONS = ("relu", "tanh")


def as_matrix(values) -> Matrix:
    """Coerce to a finite 2-D float64 array (scalars become 1x1, vectors 1xn)."""
    m = np.array(values, dtype=np.float64)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(1, -1)
    elif m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got {m.ndim} dimensions")
    _check_finite(m, "as_matrix")
    return m


def _check_finite(value: Matrix, op: str) -> Matrix:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value produced by {op}")
    return value


def _shape(m: Matrix) -> str:
    return f"{m.shape[0]}x{m.shape[1]}"


class Node:
    """One vertex of the computation graph."""

    __slots__ = ("value", "grad", "op", "parents", "requires_grad", "_vjp")

    def __init__(
        self,
        value: Matrix,
        op: str = "leaf",
        parents: Tuple["Node", ...] = (),
        vjp: Optional[Callable[[Matrix], Tuple[Optional[Matrix], ...]]] = None,
        requires_grad: bool = False,
    ) -> None:
        self.value = value
        self.grad: Optional[Matrix] = None
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._vjp = vjp

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 node, got {_shape(self.value)}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={_shape(self.value)})"


def parameter(values) -> Node:
    """A trainable leaf."""
    return Node(as_matrix(values), requires_grad=True)


def constant(values) -> Node:
    """A leaf that never receives a gradient (frozen weights, data, detached outputs)."""
    return Node(as_matrix(values))


def lift(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(value: Matrix, op: str, parents: Tuple[Node, ...], vjp) -> Node:
    _check_finite(value, op)
    return Node(value, op, parents, vjp)


def _unbroadcast(grad: Matrix, shape: Tuple[int, int]) -> Matrix:
    if grad.shape == shape:
        return grad
    if shape == (1, 1):
        return grad.sum().reshape(1, 1)
    # row broadcast (1 x n)
    return grad.sum(axis=0, keepdims=True)


def _broadcast_check(a: Node, b: Node, op: str) -> None:
    if a.shape == b.shape:
        return
    if b.shape == (1, 1) or (b.shape[0] == 1 and b.shape[1] == a.shape[1]):
        return
    raise DimensionError(f"{op}: shape mismatch {_shape(a.value)} vs {_shape(b.value)}")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def matmul(a, b) -> Node:
    a, b = lift(a), lift(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions differ, {_shape(a.value)} x {_shape(b.value)}"
        )
    av, bv = a.value, b.value

    def vjp(g: Matrix):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, "matmul", (a, b), vjp)


def add(a, b) -> Node:
    """a + b; b may be a 1x1 scalar or a 1xn row broadcast over a's rows."""
    a, b = lift(a), lift(b)
    _broadcast_check(a, b, "add")
    bshape = b.shape

    def vjp(g: Matrix):
        return g, _unbroadcast(g, bshape)

    return _make(a.value + b.value, "add", (a, b), vjp)


def sub(a, b) -> Node:
    a, b = lift(a), lift(b)
    _broadcast_check(a, b, "sub")
    bshape = b.shape

    def vjp(g: Matrix):
        return g, -_unbroadcast(g, bshape)

    return _make(a.value - b.value, "sub", (a, b), vjp)


def mul(a, b) -> Node:
    """Entrywise product; b may be a 1x1 node (differentiable scalar factor)."""
    a, b = lift(a), lift(b)
    _broadcast_check(a, b, "mul")
    av, bv, bshape = a.value, b.value, b.shape

    def vjp(g: Matrix):
        return g * bv, _unbroadcast(g * av, bshape)

    return _make(av * bv, "mul", (a, b), vjp)


def scale(a, factor: float) -> Node:
    a = lift(a)
    factor = float(factor)

    def vjp(g: Matrix):
        return (g * factor,)

    return _make(a.value * factor, "scale", (a,), vjp)


def relu(a) -> Node:
    a = lift(a)
    mask = (a.value > 0.0).astype(np.float64)

    def vjp(g: Matrix):
        return (g * mask,)

    return _make(a.value * mask, "relu", (a,), vjp)


def tanh(a) -> Node:
    a = lift(a)
    out = np.tanh(a.value)

    def vjp(g: Matrix):
        return (g * (1.0 - out * out),)

    return _make(out, "tanh", (a,), vjp)


def exp(a) -> Node:
    a = lift(a)
    out = np.exp(a.value)

    def vjp(g: Matrix):
        return (g * out,)

    return _make(out, "exp", (a,), vjp)


def activation(a, kind: str) -> Node:
    if kind == "relu":
        return relu(a)
    if kind == "tanh":
        return tanh(a)
    raise ContractError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a, b=None) -> Node:
    """Dispatch an entrywise operation by name.

    ``op`` is one of add, sub, mul (b is a node or matrix), scalar-mul
    (b is a float) or an activation name (b unused).
    """
    if op in _BINARY:
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op == "scalar-mul":
        return scale(a, b)
    return activation(a, op)


def transpose(a) -> Node:
    a = lift(a)

    def vjp(g: Matrix):
        return (g.T,)

    return _make(a.value.T.copy(), "transpose", (a,), vjp)


def l2_normalize_rows(a) -> Node:
    """Scale every row to unit Euclidean norm."""
    a = lift(a)
    norms = np.sqrt(np.sum(a.value * a.value, axis=1, keepdims=True))
    small = np.flatnonzero(norms[:, 0] < NORM_FLOOR)
    if small.size:
        raise DegenerateInputError("cannot normalize a near-zero row", int(small[0]))
    out = a.value / norms

    def vjp(g: Matrix):
        return ((g - out * np.sum(g * out, axis=1, keepdims=True)) / norms,)

    return _make(out, "l2_normalize_rows", (a,), vjp)


def log_softmax_rows(a) -> Node:
    """Row-wise log-softmax with max subtraction."""
    a = lift(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    probs = np.exp(out)

    def vjp(g: Matrix):
        return (g - probs * np.sum(g, axis=1, keepdims=True),)

    return _make(out, "log_softmax_rows", (a,), vjp)


def diagonal(a) -> Node:
    """Main diagonal of a square matrix as a k x 1 column."""
    a = lift(a)
    k = a.shape[0]
    if a.shape[1] != k:
        raise DimensionError(f"diagonal: expected a square matrix, got {_shape(a.value)}")

    def vjp(g: Matrix):
        return (np.diagflat(g[:, 0]),)

    return _make(np.diag(a.value).reshape(k, 1).copy(), "diagonal", (a,), vjp)


def total(a) -> Node:
    """Sum of all entries, as a 1x1 node."""
    a = lift(a)
    shape = a.shape

    def vjp(g: Matrix):
        return (np.full(shape, g[0, 0]),)

    return _make(a.value.sum().reshape(1, 1), "sum", (a,), vjp)


def mean(a) -> Node:
    a = lift(a)
    return scale(total(a), 1.0 / a.value.size)


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------


def _topological_order(root: Node) -> List[Node]:
    order: List[Node] = []
    seen = set()
    stack: List[Tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(root: Node, wrt: Optional[Iterable[Node]] = None) -> Dict[Node, Matrix]:
    """Propagate adjoints from a 1x1 root.

    Sets ``.grad`` on every differentiable node reachable from ``root`` and
    returns the adjoints of the trainable leaves. Nodes listed in ``wrt`` that
    the root does not depend on get zero adjoints.
    """
    if root.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) root, got {_shape(root.value)}")
    order = _topological_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, pgrad in zip(node.parents, node._vjp(node.grad)):
            if not parent.requires_grad or pgrad is None:
                continue
            parent.grad = pgrad.copy() if parent.grad is None else parent.grad + pgrad

    grads: Dict[Node, Matrix] = {
        n: n.grad for n in order if not n.parents and n.requires_grad and n.grad is not None
    }
    for leaf in wrt or ():
        if leaf not in grads:
            leaf.grad = np.zeros_like(leaf.value)
            grads[leaf] = leaf.grad
    return grads
