"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation in :mod:`echolatent.ops` returns a new
:class:`Tensor` that remembers its parents and a closure mapping the output
gradient to one gradient per parent.  :func:`backward` walks the resulting
graph once in reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward_fn: BackwardFn | None = None,
        op: str = "leaf",
    ):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ValueError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar; the implementations live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops

        return ops.div(other, self)


def _not_scalar(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    """Leaf tensor that collects gradients."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def make_result(data: np.ndarray, parents: Iterable[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    parents = tuple(parents)
    requires_grad = any(p.requires_grad for p in parents)
    if not requires_grad:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)


def topological_order(output: Tensor) -> list[Tensor]:
    """Nodes reachable from ``output`` that need gradients, inputs before users.

    This list is the compute graph: acyclic by construction, each node after
    all of its parents.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor, wrt: Sequence[Tensor] | None = None) -> list[np.ndarray] | None:
    """Backpropagate from a scalar ``output``.

    Leaf tensors with ``requires_grad`` get their ``.grad`` accumulated.  If
    ``wrt`` is given, the gradients of those tensors are also returned (zeros
    for tensors that do not influence ``output``).
    """
    if output.data.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {}
    if output.requires_grad:
        grads[id(output)] = np.ones_like(output.data)
        for node in reversed(topological_order(output)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                grads[id(node)] = g  # keep for wrt lookup
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise RuntimeError(
                        f"{node.op}: gradient shape {pg.shape} does not match input {parent.shape}"
                    )
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
    if wrt is None:
        return None
    return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]
