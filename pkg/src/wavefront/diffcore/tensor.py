"""Dense float64 tensors with define-by-run reverse-mode differentiation."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "NonFiniteError",
    "no_grad",
    "grad_enabled",
    "as_tensor",
    "backprop",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names the failing op."""

    def __init__(self, op: str, message: str):
        self.op = op
        super().__init__(f"{op}: {message}")


class NonFiniteError(FloatingPointError):
    """Raised when a forward value contains NaN or infinity."""


_GRAD_ENABLED = True


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; intermediate values are freed eagerly."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """A node in the computation graph.

    Parameters
    ----------
    data : array-like
        Values, stored as a float64 array (possibly a view).
    requires_grad : bool
        Leaf flag. Gradients are accumulated into ``grad`` for leaves with
        this flag set when :func:`backprop` is run.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: Sequence["Tensor"] = (), backward: Optional[Callable] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError("item", f"tensor of shape {self.shape} is not a scalar")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar; implementations live in ``ops``
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __pow__(self, other):
        from . import ops
        return ops.pow(self, other)

    def __rpow__(self, other):
        from . import ops
        return ops.pow(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence]


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_node(op: str, data: np.ndarray, parents: Sequence[Tensor],
              backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Create an op output, recording the graph edge only when needed.

    ``backward`` maps the output cotangent to one cotangent per parent
    (``None`` where a parent needs no gradient).
    """
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, op=op, parents=parents, backward=backward)
    return Tensor(data, op=op)


@dataclass
class Parameter:
    """A named, optionally constrained, learnable tensor.

    ``constraint`` is either a ``(low, high)`` box (``None`` for an open
    side) or a callable mapping the raw array to its projection.
    """

    name: str
    value: Tensor
    trainable: bool = True
    constraint: Optional[Union[tuple, Callable[[np.ndarray], np.ndarray]]] = None

    def __post_init__(self):
        if not isinstance(self.value, Tensor):
            self.value = Tensor(np.array(self.value, dtype=np.float64))
        self.value.requires_grad = self.trainable
        self.value.op = f"param:{self.name}"

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        self.value.requires_grad = flag

    def project(self) -> None:
        """Apply the constraint in place."""
        if self.constraint is None:
            return
        if callable(self.constraint):
            self.value.data = np.array(self.constraint(self.value.data), dtype=np.float64)
        else:
            low, high = self.constraint
            self.value.data = np.clip(self.value.data, low, high)


def _topological_order(root: Tensor) -> list:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backprop(root: Tensor, seed: Optional[np.ndarray] = None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    ``seed`` defaults to ones (so a scalar root yields the plain gradient).
    Leaf ``grad`` arrays are added to, never reset; callers zero them.
    """
    if not root.requires_grad:
        return
    cotangent = {id(root): np.ones_like(root.data) if seed is None
                 else np.broadcast_to(np.asarray(seed, dtype=np.float64), root.shape).copy()}
    for node in reversed(_topological_order(root)):
        g = cotangent.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in cotangent:
                cotangent[key] = cotangent[key] + pg
            else:
                cotangent[key] = pg
