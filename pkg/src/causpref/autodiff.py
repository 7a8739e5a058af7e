"""Minimal reverse-mode differentiation over dense 2-D float64 matrices.

Nodes are evaluated eagerly when created, so a model can read intermediate
values (for example to drive negative sampling) while the graph is still being
built.  :func:`forward` re-evaluates a finished graph from its input bindings,
which is what finite-difference checks use after perturbing an input.

Every value is a 2-D ``float64`` ndarray; scalars are ``1 x 1``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible for an op."""


class Node:
    __slots__ = ("op", "parents", "attrs", "value", "grad", "requires_grad")

    def __init__(self, op: str, parents: tuple["Node", ...], attrs: dict | None = None,
                 value: np.ndarray | None = None, requires_grad: bool = False):
        self.op = op
        self.parents = parents
        self.attrs = attrs or {}
        self.value = value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node({self.op}, shape={None if self.value is None else self.value.shape})"


# op-kind -> (forward(values, attrs) -> value, vjp(grad, values, out, attrs) -> parent grads)
_OPS: dict[str, tuple[Callable, Callable]] = {}


def _register(kind: str, fwd: Callable, vjp: Callable) -> None:
    _OPS[kind] = (fwd, vjp)


def _as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"matrices must be 2-D, got shape {arr.shape}")
    return arr


def _make(kind: str, parents: tuple[Node, ...], **attrs) -> Node:
    fwd, _ = _OPS[kind]
    value = fwd([p.value for p in parents], attrs)
    return Node(kind, parents, attrs, value, any(p.requires_grad for p in parents))


def _same_shape(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- graph leaves

def var(value, requires_grad: bool = True) -> Node:
    """Bind a matrix as a graph leaf.  Constants use ``requires_grad=False``."""
    return Node("input", (), {}, _as_matrix(value), requires_grad)


def constant(value) -> Node:
    return var(value, requires_grad=False)


# ---------------------------------------------------------------- op kernels

def _matmul_fwd(vals, attrs):
    a, b = vals
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    return a @ b


def _matmul_vjp(g, vals, out, attrs):
    a, b = vals
    return g @ b.T, a.T @ g


def _add_fwd(vals, attrs):
    _same_shape("add", *vals)
    return vals[0] + vals[1]


def _hadamard_fwd(vals, attrs):
    _same_shape("hadamard", *vals)
    return vals[0] * vals[1]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _row_norms_fwd(vals, attrs):
    return np.sqrt(np.sum(vals[0] * vals[0], axis=1, keepdims=True))


def _row_norms_vjp(g, vals, out, attrs):
    # zero rows get subgradient 0
    safe = np.where(out > 0.0, out, 1.0)
    return (np.where(out > 0.0, g / safe, 0.0) * vals[0],)


def _expm_series(b: np.ndarray) -> np.ndarray:
    """exp(b) by scaling and squaring around a Taylor series."""
    n = b.shape[0]
    norm = np.abs(b).sum(axis=0).max() if n else 0.0
    squarings = 0
    if norm > 0.5:
        squarings = int(np.ceil(np.log2(norm / 0.5)))
    c = b / (2.0 ** squarings)
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 200):
        term = term @ c / k
        result = result + term
        if np.abs(term).sum(axis=0).max() < 1e-16:
            break
    for _ in range(squarings):
        result = result @ result
    return result


def expm(b) -> np.ndarray:
    b = _as_matrix(b)
    if b.shape[0] != b.shape[1]:
        raise ShapeError(f"expm: matrix must be square, got {b.shape}")
    return _expm_series(b)


def _trace_expm_fwd(vals, attrs):
    a = vals[0]
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"trace_expm_hsq: matrix must be square, got {a.shape}")
    e = _expm_series(a * a)
    attrs["_expm"] = e
    return np.array([[np.trace(e)]])


def _trace_expm_vjp(g, vals, out, attrs):
    return (g[0, 0] * attrs["_expm"].T * 2.0 * vals[0],)


def _concat_fwd(vals, attrs):
    rows = {v.shape[0] for v in vals}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[v.shape for v in vals]}")
    return np.concatenate(vals, axis=1)


def _concat_vjp(g, vals, out, attrs):
    cuts = np.cumsum([v.shape[1] for v in vals])[:-1]
    return tuple(np.split(g, cuts, axis=1))


def _slice_fwd(vals, attrs):
    a = vals[0]
    start, stop = attrs["start"], attrs["stop"]
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for shape {a.shape}")
    return a[:, start:stop]


def _slice_vjp(g, vals, out, attrs):
    full = np.zeros_like(vals[0])
    full[:, attrs["start"]:attrs["stop"]] = g
    return (full,)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


_register("matmul", _matmul_fwd, _matmul_vjp)
_register("add", _add_fwd, lambda g, vals, out, attrs: (g, g))
_register("hadamard", _hadamard_fwd, lambda g, vals, out, attrs: (g * vals[1], g * vals[0]))
_register("relu", lambda vals, attrs: np.maximum(vals[0], 0.0),
          lambda g, vals, out, attrs: (np.where(vals[0] > 0.0, g, 0.0),))
_register("sigmoid", lambda vals, attrs: _sigmoid(vals[0]),
          lambda g, vals, out, attrs: (g * out * (1.0 - out),))
_register("softplus", lambda vals, attrs: _softplus(vals[0]),
          lambda g, vals, out, attrs: (g * _sigmoid(vals[0]),))
_register("row-l2-norms", _row_norms_fwd, _row_norms_vjp)
_register("l1-sum", lambda vals, attrs: np.array([[np.abs(vals[0]).sum()]]),
          lambda g, vals, out, attrs: (g[0, 0] * np.sign(vals[0]),))
_register("frobenius-sq", lambda vals, attrs: np.array([[np.sum(vals[0] * vals[0])]]),
          lambda g, vals, out, attrs: (2.0 * g[0, 0] * vals[0],))
_register("trace-expm-hadamard-sq", _trace_expm_fwd, _trace_expm_vjp)
_register("log", lambda vals, attrs: np.log(vals[0]),
          lambda g, vals, out, attrs: (g / vals[0],))
_register("scalar-sum", lambda vals, attrs: np.array([[vals[0].sum()]]),
          lambda g, vals, out, attrs: (np.full_like(vals[0], g[0, 0]),))
_register("scale", lambda vals, attrs: attrs["c"] * vals[0],
          lambda g, vals, out, attrs: (attrs["c"] * g,))
_register("concat-cols", _concat_fwd, _concat_vjp)
_register("slice-cols", _slice_fwd, _slice_vjp)
_register("transpose", lambda vals, attrs: vals[0].T.copy(),
          lambda g, vals, out, attrs: (g.T,))


# ---------------------------------------------------------------- public ops

def matmul(a: Node, b: Node) -> Node:
    return _make("matmul", (a, b))


def add(a: Node, b: Node) -> Node:
    return _make("add", (a, b))


def sub(a: Node, b: Node) -> Node:
    return add(a, scale(b, -1.0))


def hadamard(a: Node, b: Node) -> Node:
    return _make("hadamard", (a, b))


def relu(a: Node) -> Node:
    return _make("relu", (a,))


def sigmoid(a: Node) -> Node:
    return _make("sigmoid", (a,))


def softplus(a: Node) -> Node:
    """log(1 + e^a), evaluated without overflow."""
    return _make("softplus", (a,))


def row_l2_norms(a: Node) -> Node:
    """Column vector holding the Euclidean norm of each row."""
    return _make("row-l2-norms", (a,))


def l1_sum(a: Node) -> Node:
    return _make("l1-sum", (a,))


def frobenius_sq(a: Node) -> Node:
    return _make("frobenius-sq", (a,))


def trace_expm_hsq(a: Node) -> Node:
    """tr(exp(a * a)) with the elementwise square; gradient exp(a*a)^T * 2a."""
    return _make("trace-expm-hadamard-sq", (a,))


def log(a: Node) -> Node:
    return _make("log", (a,))


def scalar_sum(a: Node) -> Node:
    return _make("scalar-sum", (a,))


def scale(a: Node, c: float) -> Node:
    return _make("scale", (a,), c=float(c))


def concat_cols(*nodes: Node) -> Node:
    return _make("concat-cols", tuple(nodes))


def slice_cols(a: Node, start: int, stop: int) -> Node:
    return _make("slice-cols", (a,), start=int(start), stop=int(stop))


def transpose(a: Node) -> Node:
    return _make("transpose", (a,))


def sum_nodes(nodes: Sequence[Node]) -> Node:
    total = nodes[0]
    for n in nodes[1:]:
        total = add(total, n)
    return total


# ---------------------------------------------------------------- traversal

def topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def forward(root: Node) -> np.ndarray:
    """Re-evaluate every node below ``root`` from the current input values."""
    for node in topological_order(root):
        if node.op == "input":
            if node.value is None:
                raise ValueError("unbound input node")
            continue
        fwd, _ = _OPS[node.op]
        node.value = fwd([p.value for p in node.parents], node.attrs)
    return root.value


def backward(root: Node) -> list[Node]:
    """Fill ``grad`` on every node reachable from a 1 x 1 root.

    Returns the input nodes that require gradients, in topological order.
    """
    if root.value is None or root.value.shape != (1, 1):
        shape = None if root.value is None else root.value.shape
        raise ShapeError(f"backward needs a 1 x 1 root, got {shape}")
    order = topological_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones((1, 1))
    for node in reversed(order):
        if node.grad is None or not node.requires_grad or node.op == "input":
            continue
        _, vjp = _OPS[node.op]
        grads = vjp(node.grad, [p.value for p in node.parents], node.value, node.attrs)
        for parent, g in zip(node.parents, grads):
            if not parent.requires_grad:
                continue
            parent.grad = g.copy() if parent.grad is None else parent.grad + g
    leaves = [n for n in order if n.op == "input" and n.requires_grad]
    for leaf in leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.value)
    return leaves
