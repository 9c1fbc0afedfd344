"""Dense tensors with reverse-mode differentiation.

Each op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to one gradient per parent. Shapes
must agree exactly for elementwise ops; there is no implicit broadcasting.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeMismatch

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        name: str | None = None,
    ):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != self.shape:
            raise ShapeMismatch(f"gradient shape {grad.shape} != tensor shape {self.shape}")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
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
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def _topological_order(root: Tensor) -> list[Tensor]:
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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Build an op output; gradient plumbing only if some parent needs it."""
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward=backward)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def add(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return make(a.data + b, (a,), lambda g: (g,))
    if _is_scalar(a):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -b)
    if _is_scalar(a):
        return add(mul(b, -1.0), a)
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        c = float(b)
        return make(a.data * c, (a,), lambda g: (g * c,))
    if _is_scalar(a):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    return make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(B, I) @ (I, O) -> (B, O)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T + bias with x (B, I), weight (O, I), bias (O,)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} does not fit weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeMismatch(f"linear: bias {bias.shape} does not fit weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data
        gw = g.T @ x.data
        return (gx, gw) if bias is None else (gx, gw, g.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return make(out, (x,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make(out, (x,), lambda g: (g * (1.0 - out * out),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape: {x.shape} -> {shape}: {exc}") from None
    return make(out, (x,), lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor) -> Tensor:
    """(N, ...) -> (N, prod(...))."""
    return reshape(x, (x.shape[0], -1))


def getitem(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    parts = index if isinstance(index, tuple) else (index,)
    if any(isinstance(i, (np.ndarray, list)) for i in parts):
        raise TypeError("use gather_rows for integer-array indexing")
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return make(np.array(out, copy=True), (x,), backward)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows of a 2-d tensor picked by an integer array (repeats allowed)."""
    index = np.asarray(index, dtype=np.intp)
    if x.ndim != 2:
        raise ShapeMismatch(f"gather_rows expects a 2-d tensor, got {x.shape}")

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index.reshape(-1), g.reshape(-1, x.shape[1]))
        return (full,)

    return make(x.data[index], (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat of nothing")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors:
        other = t.shape[:axis] + t.shape[axis + 1:]
        first = tensors[0].shape[:axis] + tensors[0].shape[axis + 1:]
        if t.ndim != ndim or other != first:
            raise ShapeMismatch(f"concat: shapes {[t.shape for t in tensors]} disagree off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def sum_all(x: Tensor) -> Tensor:
    return make(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    return make(np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def mean_of(scalars: Sequence[Tensor]) -> Tensor:
    """Unweighted mean of scalar tensors."""
    for s in scalars:
        if s.size != 1:
            raise ShapeMismatch(f"mean_of expects scalars, got {s.shape}")
    n = len(scalars)
    value = np.array(sum(float(s.data) for s in scalars) / n)
    return make(value, tuple(scalars), lambda g: tuple(np.full(s.shape, float(g) / n) for s in scalars))
