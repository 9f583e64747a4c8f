"""Tensor type and reverse-mode traversal."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from distillkit.errors import ContractError, NumericDomainError, ShapeError


class Tensor:
    """A float64 array that remembers how it was produced.

    Nodes only record parents when at least one input requires a gradient,
    so forward passes over frozen parameters build no graph at all.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, *, _parents=(), _backward=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if not np.isfinite(arr).all():
            where = op if op != "leaf" else (name or "leaf tensor")
            raise NumericDomainError(f"non-finite values in {where}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        return backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the real work lives in ops
    def __add__(self, other):
        return _ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _ops.sub(self, other)

    def __rsub__(self, other):
        return _ops.sub(other, self)

    def __mul__(self, other):
        return _ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return _ops.scale(self, -1.0)

    def __matmul__(self, other):
        return _ops.matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops.reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops.transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return _ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class ComputeGraph:
    """Nodes reachable from a loss, in topological order (inputs first)."""

    nodes: list = field(default_factory=list)

    @property
    def backward_order(self):
        return list(reversed(self.nodes))

    def leaves(self):
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]


def topological_order(root):
    order = []
    seen = set()
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
        # reversed so parents are expanded in declaration order
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every leaf that requires it; returns the graph walked.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward() expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    graph = ComputeGraph(topological_order(loss))
    if not loss.requires_grad:
        return graph
    grads = {id(loss): np.ones_like(loss.data)}
    for node in graph.backward_order:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.data.shape:
                raise ShapeError(f"gradient shape {pg.shape} != {p.data.shape} in {node.op}")
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
    return graph


from distillkit.numerics import ops as _ops  # noqa: E402  (cyclic: ops needs Tensor)
