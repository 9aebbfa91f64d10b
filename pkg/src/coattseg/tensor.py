"""Small dense tensor engine with tape-based reverse-mode gradients.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them. :func:`backward` walks
the graph in reverse topological order. Values are always float64.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when a caller violates an operation's precondition."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "__weakref__")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


class Parameter(Tensor):
    """A learnable tensor with a unique name inside its model."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _not_scalar(t: Tensor):
    raise ContractError(f"expected a scalar tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)


def _check_matrix(t: Tensor, what: str) -> None:
    if t.data.ndim != 2:
        raise DimensionError(f"{what} must be a matrix, got shape {t.shape}")


# -- differentiable operations ------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_matrix(a, "matmul lhs")
    _check_matrix(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(out, (a, b), _backward)


def softmax_columns(m: Tensor) -> Tensor:
    """Softmax over each column (axis 0), so every column sums to one."""
    m = as_tensor(m)
    _check_matrix(m, "softmax_columns input")
    if m.size == 0:
        raise DimensionError(f"softmax_columns on empty matrix {m.shape}")
    shifted = m.data - m.data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=0, keepdims=True)

    def _backward(g: np.ndarray) -> None:
        # per column: J^T g = s * (g - <g, s>)
        m._accumulate(s * (g - (g * s).sum(axis=0, keepdims=True)))

    return _result(s, (m,), _backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(t: Tensor) -> Tensor:
    t = as_tensor(t)
    s = _sigmoid(t.data)

    def _backward(g: np.ndarray) -> None:
        t._accumulate(g * s * (1.0 - s))

    return _result(s, (t,), _backward)


def relu(t: Tensor) -> Tensor:
    t = as_tensor(t)
    mask = t.data > 0

    def _backward(g: np.ndarray) -> None:
        t._accumulate(g * mask)

    return _result(t.data * mask, (t,), _backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_ok(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    return len(a) == len(b) and all(y == x or y == 1 for x, y in zip(a, b))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product. ``b`` may have extent 1 on any axis of ``a``
    (a 1×n gate broadcast down the channel axis, for instance)."""
    a, b = as_tensor(a), as_tensor(b)
    if not _broadcast_ok(a.shape, b.shape):
        raise DimensionError(f"hadamard shapes incompatible: {a.shape} and {b.shape}")
    out = a.data * b.data

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(out, (a, b), _backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may broadcast along axes where it has extent 1."""
    a, b = as_tensor(a), as_tensor(b)
    if not _broadcast_ok(a.shape, b.shape):
        raise DimensionError(f"add shapes incompatible: {a.shape} and {b.shape}")

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), _backward)


def scale(t: Tensor, factor: float) -> Tensor:
    t = as_tensor(t)

    def _backward(g: np.ndarray) -> None:
        t._accumulate(g * factor)

    return _result(t.data * factor, (t,), _backward)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_matrix(a, "concat_rows top")
    _check_matrix(b, "concat_rows bottom")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"concat_rows column counts differ: {a.shape} and {b.shape}")
    r1 = a.shape[0]

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g[:r1])
        if b.requires_grad:
            b._accumulate(g[r1:])

    return _result(np.concatenate([a.data, b.data], axis=0), (a, b), _backward)


def transpose(t: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    t = as_tensor(t)
    axes = tuple(reversed(range(t.data.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def _backward(g: np.ndarray) -> None:
        t._accumulate(g.transpose(inverse))

    return _result(t.data.transpose(axes), (t,), _backward)


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    t = as_tensor(t)
    src = t.shape
    try:
        out = t.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {tuple(shape)}") from exc

    def _backward(g: np.ndarray) -> None:
        t._accumulate(g.reshape(src))

    return _result(out, (t,), _backward)


def total(t: Tensor) -> Tensor:
    """Sum of all entries, as a 0-d tensor."""
    t = as_tensor(t)

    def _backward(g: np.ndarray) -> None:
        t._accumulate(np.broadcast_to(g, t.shape))

    return _result(np.array(t.data.sum()), (t,), _backward)


def mean_of(tensors: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of equally shaped tensors."""
    if not tensors:
        raise ContractError("mean_of needs at least one tensor")
    acc = tensors[0]
    for t in tensors[1:]:
        if t.shape != acc.shape:
            raise DimensionError(f"mean_of shapes differ: {acc.shape} and {t.shape}")
        acc = add(acc, t)
    return acc if len(tensors) == 1 else scale(acc, 1.0 / len(tensors))


def binary_cross_entropy(p: Tensor, target: np.ndarray, eps: float = 1e-7) -> Tensor:
    """Mean BCE with ``p`` clamped to ``[eps, 1 - eps]``; clamped entries get no gradient."""
    p = as_tensor(p)
    y = np.asarray(target, dtype=np.float64)
    if y.shape != p.shape:
        raise DimensionError(f"bce shapes differ: prediction {p.shape}, target {y.shape}")
    pc = np.clip(p.data, eps, 1.0 - eps)
    n = p.size
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).mean()
    inside = (p.data > eps) & (p.data < 1.0 - eps)

    def _backward(g: np.ndarray) -> None:
        dp = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n
        p._accumulate(g * dp * inside)

    return _result(np.array(loss), (p,), _backward)


# -- graph traversal ----------------------------------------------------------


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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Intermediate gradients are released once consumed; leaf gradients add up
    across calls until :func:`zero_grad` resets them.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    seed = np.ones_like(loss.data)
    if loss._backward is None:
        loss._accumulate(seed)
        return
    loss.grad = seed
    for node in reversed(_topo_order(loss)):
        if node._backward is None:
            continue
        g, node.grad = node.grad, None
        if g is not None:
            node._backward(g)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
