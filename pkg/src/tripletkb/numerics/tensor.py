"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is a small tape: every operation returns a new :class:`Tensor`
that remembers its parents and a closure that scatters the output gradient
back to them. Graph bookkeeping is skipped entirely when no input requires
gradients, so evaluation-mode code pays only the numpy cost.

Only the operations this package actually trains through are implemented;
this is not a general-purpose autodiff library.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import DomainError, ShapeError

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` over the axes numpy broadcasting introduced."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Immutable-by-convention dense tensor participating in a backward tape.

    ``data`` is a row-major float64 numpy array; ``product(shape)`` always
    equals ``data.size``. Public operations never mutate their inputs, so
    instances are safe to share read-only across threads.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.data: Array = np.asarray(values, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------

    @staticmethod
    def _make(data: Array, parents: tuple["Tensor", ...],
              backward: Callable[[Array], None]) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # ------------------------------------------------------------------
    # backward pass
    # ------------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ShapeError("backward() starts from a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        for node in topo:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------------
    # elementwise arithmetic (numpy broadcasting rules)
    # ------------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = self.data + other.data

        def bw(g: Array) -> None:
            if self.requires_grad:
                self.grad += _unbroadcast(g, self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(g, other.data.shape)

        return Tensor._make(out, (self, other), bw)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __neg__(self) -> "Tensor":
        def bw(g: Array) -> None:
            if self.requires_grad:
                self.grad -= g

        return Tensor._make(-self.data, (self,), bw)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = self.data * other.data

        def bw(g: Array) -> None:
            if self.requires_grad:
                self.grad += _unbroadcast(g * other.data, self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(g * self.data, other.data.shape)

        return Tensor._make(out, (self, other), bw)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = self.data / other.data

        def bw(g: Array) -> None:
            if self.requires_grad:
                self.grad += _unbroadcast(g / other.data, self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(-g * self.data / (other.data ** 2),
                                           other.data.shape)

        return Tensor._make(out, (self, other), bw)

    def __pow__(self, exponent: float) -> "Tensor":
        if not isinstance(exponent, (int, float)):
            raise ShapeError("only scalar exponents are supported")
        out = self.data ** exponent

        def bw(g: Array) -> None:
            if self.requires_grad:
                self.grad += g * exponent * self.data ** (exponent - 1)

        return Tensor._make(out, (self,), bw)

    # ------------------------------------------------------------------
    # shape and reduction ops
    # ------------------------------------------------------------------

    def t(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"t() needs a matrix, got shape {self.shape}")

        def bw(g: Array) -> None:
            if self.requires_grad:
                self.grad += g.T

        return Tensor._make(self.data.T.copy(), (self,), bw)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g: Array) -> None:
            if not self.requires_grad:
                return
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self.grad += np.broadcast_to(gg, self.data.shape)

        return Tensor._make(np.asarray(out), (self,), bw)

    def mean(self, axis: int | None = None) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / count)

    def max(self, axis: int) -> "Tensor":
        """Maximum along ``axis``; gradient flows to the first argmax."""
        idx = np.argmax(self.data, axis=axis)
        out = np.take_along_axis(self.data, np.expand_dims(idx, axis), axis)
        out = out.squeeze(axis)

        def bw(g: Array) -> None:
            if self.requires_grad:
                gg = np.zeros_like(self.data)
                np.put_along_axis(gg, np.expand_dims(idx, axis),
                                  np.expand_dims(g, axis), axis)
                self.grad += gg

        return Tensor._make(out, (self,), bw)

    # ------------------------------------------------------------------
    # elementwise nonlinearities
    # ------------------------------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0.0

        def bw(g: Array) -> None:
            if self.requires_grad:
                self.grad += g * mask

        return Tensor._make(np.where(mask, self.data, 0.0), (self,), bw)

    def log(self) -> "Tensor":
        def bw(g: Array) -> None:
            if self.requires_grad:
                self.grad += g / self.data

        return Tensor._make(np.log(self.data), (self,), bw)

    def exp(self) -> "Tensor":
        out = np.exp(self.data)

        def bw(g: Array) -> None:
            if self.requires_grad:
                self.grad += g * out

        return Tensor._make(out, (self,), bw)

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)

        def bw(g: Array) -> None:
            if self.requires_grad:
                self.grad += g * 0.5 / out

        return Tensor._make(out, (self,), bw)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, as_tensor(other))


def as_tensor(values) -> Tensor:
    """Wrap arrays/scalars as constant tensors; pass tensors through."""
    if isinstance(values, Tensor):
        return values
    return Tensor(values)


# ----------------------------------------------------------------------
# free functions
# ----------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands with numpy semantics.

    Deterministic for fixed operand shapes and thread configuration; all
    reductions happen inside a single BLAS call.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-D/2-D operands, got "
                         f"{a.shape} @ {b.shape}")
    a2 = a.data if a.ndim == 2 else a.data[None, :]
    b2 = b.data if b.ndim == 2 else b.data[:, None]
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: "
                         f"{a.shape} @ {b.shape}")
    out2 = a2 @ b2
    out = out2
    if a.ndim == 1:
        out = out[0]
    if b.ndim == 1:
        out = out[..., 0]

    def bw(g: Array) -> None:
        g2 = g.reshape(out2.shape)
        if a.requires_grad:
            ga = g2 @ b2.T
            a.grad += ga.reshape(a.data.shape)
        if b.requires_grad:
            gb = a2.T @ g2
            b.grad += gb.reshape(b.data.shape)

    return Tensor._make(np.asarray(out), (a, b), bw)


def softmax(x, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """Temperature softmax with max-subtraction for stability.

    Output entries are nonnegative and sum to 1 along ``axis``; adding a
    constant to every input leaves the output unchanged.
    """
    if temperature <= 0.0:
        raise DomainError(f"softmax temperature must be > 0, got {temperature}")
    x = as_tensor(x)
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g: Array) -> None:
        if x.requires_grad:
            inner = (g * p).sum(axis=axis, keepdims=True)
            x.grad += p * (g - inner) / temperature

    return Tensor._make(p, (x,), bw)


def logsumexp(x, axis: int = -1) -> Tensor:
    """Stable log-sum-exp reduction along ``axis``."""
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)

    def bw(g: Array) -> None:
        if x.requires_grad:
            x.grad += np.expand_dims(g, axis) * (e / s)

    return Tensor._make(out, (x,), bw)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack of zero tensors")
    out = np.stack([t.data for t in tensors], axis=0)

    def bw(g: Array) -> None:
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.grad += g[i]

    return Tensor._make(out, tuple(tensors), bw)


def index_rows(x, indices) -> Tensor:
    """Gather rows of a matrix; repeated indices accumulate gradient."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"index_rows needs a matrix, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out = x.data[idx]

    def bw(g: Array) -> None:
        if x.requires_grad:
            np.add.at(x.grad, idx, g)

    return Tensor._make(out, (x,), bw)


def take_pairs(x, rows, cols) -> Tensor:
    """Gather ``x[rows[i], cols[i]]`` into a vector."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"take_pairs needs a matrix, got shape {x.shape}")
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    out = x.data[r, c]

    def bw(g: Array) -> None:
        if x.requires_grad:
            np.add.at(x.grad, (r, c), g)

    return Tensor._make(out, (x,), bw)


def pick(x, index: int) -> Tensor:
    """Select one entry of a vector as a scalar."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"pick needs a vector, got shape {x.shape}")
    i = int(index)
    out = np.asarray(x.data[i])

    def bw(g: Array) -> None:
        if x.requires_grad:
            x.grad[i] += g

    return Tensor._make(out, (x,), bw)


def cosine_distance(x, y) -> Tensor:
    """``1 - cos(x, y)`` as a differentiable scalar in [0, 2].

    Zero-norm inputs raise: real embeddings never have exactly zero norm,
    so hitting one indicates an upstream pipeline bug.
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ShapeError(f"cosine_distance needs equal-length vectors, got "
                         f"{x.shape} and {y.shape}")
    nx = float(np.linalg.norm(x.data))
    ny = float(np.linalg.norm(y.data))
    if nx == 0.0 or ny == 0.0:
        raise DomainError("cosine_distance is undefined for zero-norm input")
    num = (x * y).sum()
    denom = ((x * x).sum()).sqrt() * ((y * y).sum()).sqrt()
    return 1.0 - num / denom


@dataclass(frozen=True)
class FfnWeights:
    """Two fully connected layers with a relu between them."""

    fc1_w: Tensor  # (hidden, d_in)
    fc1_b: Tensor  # (hidden,)
    fc2_w: Tensor  # (d_out, hidden)
    fc2_b: Tensor  # (d_out,)


def ffn_forward(x, layer: FfnWeights) -> Tensor:
    """``fc2(relu(fc1(x)))`` for a single vector or a batch of rows."""
    x = as_tensor(x)
    hidden = matmul(x, layer.fc1_w.t()) + layer.fc1_b
    return matmul(hidden.relu(), layer.fc2_w.t()) + layer.fc2_b
