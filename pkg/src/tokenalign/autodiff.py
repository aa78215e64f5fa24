"""Minimal reverse-mode automatic differentiation over dense 2-D float64 arrays.

A :class:`Node` wraps a 2-D array and remembers how it was produced. Calling
:meth:`Node.backward` on a 1x1 node accumulates ``grad`` on every node that
contributed to it. Only a fixed set of ops is supported; anything else can be
expressed with :func:`custom`.

Broadcasting is limited to the 2-D cases needed for biases: an operand of shape
(1, m), (n, 1) or (1, 1) is stretched against an (n, m) partner.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError, ParameterError

__all__ = [
    "Node", "as_node", "param", "custom",
    "matmul", "add", "sub", "mul", "scale", "neg", "transpose",
    "relu", "exp", "log", "xlogx", "sqrt",
    "reduce_sum", "sum_axis", "mean_axis", "diag",
    "softmax_temp", "log_softmax_rows", "sq_dists", "normalize_rows",
    "stack_rows", "grad_check",
]


def _as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Node:
    """A value in the computation graph.

    Parameters
    ----------
    value : array-like
        Scalars and 1-D inputs are promoted to 1xn row matrices.
    requires_grad : bool
        Leaves with ``requires_grad=False`` never receive gradients.
    """

    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad", "op")

    def __init__(self, value, requires_grad: bool = False, *, parents=(), backward=None, op="leaf"):
        value = _as_matrix(value)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value produced by '{op}'")
        self.value = value
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.op = op

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a 1x1 node, got {self.shape}")
        return float(self.value[0, 0])

    def zero_grad(self) -> None:
        for node in _topo_order(self):
            node.grad = None

    def backward(self, seed=None) -> None:
        """Accumulate d(self)/d(node) into ``node.grad`` for every ancestor."""
        if seed is None:
            if self.value.size != 1:
                raise ContractError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.value)
        order = _topo_order(self)
        grads = {id(self): np.array(seed, dtype=np.float64).reshape(self.shape)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return NotImplemented

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.shape})"


def _topo_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def param(value) -> Node:
    """Trainable leaf."""
    return Node(value, requires_grad=True)


def custom(value, parents: Sequence[Node], backward: Callable, op: str = "custom") -> Node:
    """Wrap an externally computed value whose gradient rule is supplied by the caller.

    ``backward(g)`` must return one gradient (or ``None``) per parent.
    """
    return Node(value, parents=parents, backward=backward, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _broadcast_shape(a: Node, b: Node, op: str) -> tuple[int, int]:
    out = []
    for da, db in zip(a.shape, b.shape):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    return tuple(out)


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def backward(g):
        return g @ bv.T, av.T @ g

    return Node(av @ bv, parents=(a, b), backward=backward, op="matmul")


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Node(a.value + b.value, parents=(a, b), backward=backward, op="add")


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return Node(a.value - b.value, parents=(a, b), backward=backward, op="sub")


def mul(a, b) -> Node:
    """Elementwise product."""
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "mul")
    av, bv = a.value, b.value

    def backward(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return Node(av * bv, parents=(a, b), backward=backward, op="mul")


def scale(a, c: float) -> Node:
    a = as_node(a)
    c = float(c)
    return Node(a.value * c, parents=(a,), backward=lambda g: (g * c,), op="scale")


def neg(a) -> Node:
    return scale(a, -1.0)


def transpose(a) -> Node:
    a = as_node(a)
    return Node(a.value.T, parents=(a,), backward=lambda g: (g.T,), op="transpose")


def relu(a) -> Node:
    a = as_node(a)
    mask = a.value > 0
    return Node(np.where(mask, a.value, 0.0), parents=(a,),
                backward=lambda g: (g * mask,), op="relu")


def exp(a) -> Node:
    a = as_node(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return Node(out, parents=(a,), backward=lambda g: (g * out,), op="exp")


def log(a) -> Node:
    a = as_node(a)
    if np.any(a.value <= 0):
        raise ParameterError("log: non-positive input")
    v = a.value
    return Node(np.log(v), parents=(a,), backward=lambda g: (g / v,), op="log")


def sqrt(a) -> Node:
    a = as_node(a)
    if np.any(a.value < 0):
        raise ParameterError("sqrt: negative input")
    out = np.sqrt(a.value)
    return Node(out, parents=(a,), backward=lambda g: (g * 0.5 / out,), op="sqrt")


def xlogx(a) -> Node:
    """Elementwise x*ln(x) with 0*ln(0) := 0 (and zero gradient there)."""
    a = as_node(a)
    v = a.value
    if np.any(v < 0):
        raise ParameterError("xlogx: negative input")
    pos = v > 0
    safe = np.where(pos, v, 1.0)
    out = np.where(pos, v * np.log(safe), 0.0)

    def backward(g):
        return (np.where(pos, g * (np.log(safe) + 1.0), 0.0),)

    return Node(out, parents=(a,), backward=backward, op="xlogx")


def reduce_sum(a) -> Node:
    a = as_node(a)
    shape = a.shape
    return Node(a.value.sum(), parents=(a,),
                backward=lambda g: (np.full(shape, g[0, 0]),), op="reduce_sum")


def sum_axis(a, axis: int) -> Node:
    """Sum over rows (axis=0 -> 1xm) or columns (axis=1 -> nx1)."""
    a = as_node(a)
    shape = a.shape
    out = a.value.sum(axis=axis, keepdims=True)
    return Node(out, parents=(a,), backward=lambda g: (np.broadcast_to(g, shape).copy(),),
                op="sum_axis")


def mean_axis(a, axis: int) -> Node:
    a = as_node(a)
    return scale(sum_axis(a, axis), 1.0 / a.shape[axis])


def diag(a) -> Node:
    """Diagonal of a square matrix as an nx1 column."""
    a = as_node(a)
    n, m = a.shape
    if n != m:
        raise DimensionError(f"diag: expected square matrix, got {a.shape}")

    def backward(g):
        return (np.diag(g[:, 0]),)

    return Node(np.diag(a.value).reshape(n, 1).copy(), parents=(a,), backward=backward, op="diag")


def softmax_temp(x, tau: float = 1.0) -> Node:
    """Row-wise softmax of ``x / tau``."""
    if not tau > 0:
        raise ParameterError(f"softmax temperature must be positive, got {tau}")
    x = as_node(x)
    z = x.value / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - inner) / tau,)

    return Node(out, parents=(x,), backward=backward, op="softmax")


def log_softmax_rows(x) -> Node:
    x = as_node(x)
    z = x.value - x.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return Node(out, parents=(x,), backward=backward, op="log_softmax")


def sq_dists(x, y) -> Node:
    """Pairwise squared Euclidean distances between the rows of x (n x d) and y (m x d)."""
    x, y = as_node(x), as_node(y)
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"sq_dists: feature dimensions differ, {x.shape} vs {y.shape}")
    xv, yv = x.value, y.value
    diff = xv[:, None, :] - yv[None, :, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)

    def backward(g):
        gx = 2.0 * (g.sum(axis=1, keepdims=True) * xv - g @ yv)
        gy = 2.0 * (g.sum(axis=0)[:, None] * yv - g.T @ xv)
        return gx, gy

    return Node(out, parents=(x, y), backward=backward, op="sq_dists")


def normalize_rows(x, eps: float = 1e-12) -> Node:
    """Scale every row to unit L2 norm."""
    x = as_node(x)
    v = x.value
    norms = np.sqrt((v * v).sum(axis=1, keepdims=True))
    if np.any(norms < eps):
        raise ParameterError("normalize_rows: zero-norm row")
    u = v / norms

    def backward(g):
        return ((g - u * (g * u).sum(axis=1, keepdims=True)) / norms,)

    return Node(u, parents=(x,), backward=backward, op="normalize_rows")


def stack_rows(nodes: Iterable[Node]) -> Node:
    """Concatenate nodes vertically."""
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ContractError("stack_rows: empty input")
    widths = {n.shape[1] for n in nodes}
    if len(widths) != 1:
        raise DimensionError(f"stack_rows: differing widths {sorted(widths)}")
    bounds = np.cumsum([0] + [n.shape[0] for n in nodes])

    def backward(g):
        return [g[bounds[k]:bounds[k + 1]] for k in range(len(nodes))]

    return Node(np.vstack([n.value for n in nodes]), parents=nodes, backward=backward,
                op="stack_rows")


def grad_check(f: Callable[[Node], Node], point, eps: float = 1e-5) -> float:
    """Compare the autodiff gradient of scalar ``f`` with central differences.

    The step for coordinate i is ``eps * max(1, |x_i|)``. Returns the largest
    ``|autodiff - fd| / max(1, |fd|)`` over all coordinates.
    """
    x0 = _as_matrix(point)
    leaf = param(x0.copy())
    out = f(leaf)
    if out.value.size != 1:
        raise ContractError(f"grad_check: f must return a scalar, got shape {out.shape}")
    out.backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)

    numeric = np.zeros_like(x0)
    for idx in np.ndindex(*x0.shape):
        h = eps * max(1.0, abs(x0[idx]))
        xp, xm = x0.copy(), x0.copy()
        xp[idx] += h
        xm[idx] -= h
        fp = f(Node(xp)).item()
        fm = f(Node(xm)).item()
        numeric[idx] = (fp - fm) / (2.0 * h)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
