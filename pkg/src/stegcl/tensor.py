"""Minimal reverse-mode autodiff on numpy arrays.

A Tensor wraps an ndarray plus an optional provenance node (op tag, parent
tensors, gradient closure). Calling backward() on a scalar loss topologically
walks the graph and accumulates dLoss/dT into .grad of every reachable tensor
that requires gradients. Graphs are built fresh per forward pass and are
confined to a single thread.

Dtype policy: floating inputs keep their dtype (float64 in gradient-check
tests), everything else is coerced to float32. Reductions accumulate at
64 bit and cast back.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ValidationError

Number = (int, float, np.integer, np.floating)


@dataclass
class Node:
    """Provenance record: which op produced a tensor and from what."""

    op: str
    parents: tuple
    grad_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, node: Optional[Node] = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node = node

    # ------------------------------------------------------------------
    # basic introspection

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # backward pass

    def backward(self):
        """Accumulate gradients of this scalar into every reachable tensor.

        Repeated calls without zero_grad() add up. Flow gradients are kept
        separate from the stored .grad so a second pass contributes exactly
        its own contribution.
        """
        if self.data.size != 1:
            raise ValidationError(
                f"backward() requires a scalar, got shape {self.data.shape}"
            )
        order = _toposort(self)
        flow = {id(self): np.ones_like(self.data)}
        for t in order:
            g = flow.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
            if t.node is None:
                continue
            for parent, pg in zip(t.node.parents, t.node.grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in flow:
                    flow[pid] = flow[pid] + pg
                else:
                    flow[pid] = pg


def _toposort(root: Tensor):
    """Iterative DFS post-order, returned reversed (root first)."""
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if id(p) not in visited:
                    stack.append((p, False))
    order.reverse()
    return order


# ----------------------------------------------------------------------
# op construction helpers


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(op: str, out_data: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    """Wrap an op result; the node is only kept if a parent needs gradients."""
    if any(p.requires_grad for p in parents):
        return Tensor(out_data, requires_grad=True, node=Node(op, tuple(parents), grad_fn))
    return Tensor(out_data)


def _check_same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ValidationError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _sum64(arr: np.ndarray, axis=None, keepdims=False) -> np.ndarray:
    """Reduction with 64-bit accumulation, cast back to the input dtype."""
    return arr.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(arr.dtype)


# ----------------------------------------------------------------------
# elementwise arithmetic (tensor-tensor same shape, or tensor-scalar)


def _binary(op, a: Tensor, b, fwd, grad_a, grad_b):
    if isinstance(b, Tensor):
        _check_same_shape(op, a, b)
        out = fwd(a.data, b.data)
        return make_op(op, out, (a, b), lambda g: (grad_a(g, a.data, b.data), grad_b(g, a.data, b.data)))
    if isinstance(b, Number):
        bv = float(b)
        out = fwd(a.data, bv)
        return make_op(op, out, (a,), lambda g: (grad_a(g, a.data, bv),))
    return NotImplemented


class _OpsMixin:
    pass


def _add(a, b):
    return _binary("add", a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def _sub(a, b):
    return _binary("sub", a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def _mul(a, b):
    return _binary("mul", a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def _div(a, b):
    return _binary(
        "div", a, b, lambda x, y: x / y, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y)
    )


Tensor.__add__ = _add
Tensor.__radd__ = _add
Tensor.__sub__ = _sub
Tensor.__mul__ = _mul
Tensor.__rmul__ = _mul
Tensor.__truediv__ = _div


def _rsub(a, b):  # b - a with b scalar
    if isinstance(b, Number):
        bv = float(b)
        return make_op("rsub", bv - a.data, (a,), lambda g: (-g,))
    return NotImplemented


def _rdiv(a, b):  # b / a with b scalar
    if isinstance(b, Number):
        bv = float(b)
        return make_op("rdiv", bv / a.data, (a,), lambda g: (-g * bv / (a.data * a.data),))
    return NotImplemented


Tensor.__rsub__ = _rsub
Tensor.__rtruediv__ = _rdiv
Tensor.__neg__ = lambda self: make_op("neg", -self.data, (self,), lambda g: (-g,))


def _pow(a: Tensor, c) -> Tensor:
    if not isinstance(c, Number):
        return NotImplemented
    cv = float(c)
    out = a.data ** cv
    return make_op("pow", out, (a,), lambda g: (g * cv * a.data ** (cv - 1.0),))


Tensor.__pow__ = _pow


def _log(self: Tensor) -> Tensor:
    return make_op("log", np.log(self.data), (self,), lambda g: (g / self.data,))


def _sqrt(self: Tensor) -> Tensor:
    out = np.sqrt(self.data)
    return make_op("sqrt", out, (self,), lambda g: (g * 0.5 / out,))


def _clip(self: Tensor, lo=None, hi=None) -> Tensor:
    out = np.clip(self.data, lo, hi)
    mask = np.ones_like(self.data, dtype=bool)
    if lo is not None:
        mask &= self.data > lo
    if hi is not None:
        mask &= self.data < hi

    return make_op("clip", out, (self,), lambda g: (g * mask,))


def _sum(self: Tensor) -> Tensor:
    out = _sum64(self.data)
    return make_op("sum", out, (self,), lambda g: (np.broadcast_to(g, self.data.shape).copy(),))


def _mean(self: Tensor) -> Tensor:
    n = self.data.size
    out = _sum64(self.data) / self.data.dtype.type(n)
    return make_op(
        "mean", out, (self,), lambda g: (np.broadcast_to(g / n, self.data.shape).copy(),)
    )


Tensor.log = _log
Tensor.sqrt = _sqrt
Tensor.clip = _clip
Tensor.sum = _sum
Tensor.mean = _mean


# ----------------------------------------------------------------------
# activations


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    """max(x, slope*x); the subgradient at exactly 0 is `slope`."""
    if not 0.0 <= slope < 1.0:
        raise ValidationError(f"leaky_relu slope must be in [0,1), got {slope}")
    x = as_tensor(x)
    factor = np.where(x.data > 0, x.data.dtype.type(1), x.data.dtype.type(slope))
    return make_op("leaky_relu", x.data * factor, (x,), lambda g: (g * factor,))


def sigmoid(x: Tensor) -> Tensor:
    """1/(1+exp(-x)), stable for large |x| (scipy expit)."""
    x = as_tensor(x)
    out = expit(x.data)
    return make_op("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate [N,Ca,H,W] and [N,Cb,H,W] along the channel axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValidationError(
            f"concat_channels: incompatible shapes {a.shape} vs {b.shape}"
        )
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return make_op(
        "concat", out, (a, b), lambda g: (g[:, :ca], g[:, ca:])
    )
