"""Dense tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float64 by default, float32 available for
speed) and record the operations applied to them. Calling ``backward``
on a scalar result walks the recorded graph in reverse topological
order and accumulates gradients into every tensor that requires them.

Only the operations the network graph needs are provided; there is no
general broadcasting. Every forward result and every propagated
gradient is checked for NaN/Inf, which is treated as a hard error.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class NumericsError(ArithmeticError):
    """A forward or backward pass produced a non-finite value."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that suspends graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericsError(f"non-finite values in {what}")


class Tensor:
    """N-dimensional array with an optional gradient record."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        _check_finite(arr, "tensor data")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Optional[Callable[[np.ndarray], tuple]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _from_op(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _binary_shapes(x: Tensor, y: Tensor, op: str) -> None:
    if x.shape != y.shape and x.size != 1 and y.size != 1:
        raise ShapeError(f"{op}: shapes {x.shape} and {y.shape} do not match")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # only scalar-vs-array mixing is allowed, so a full reduction suffices
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def add(x, y) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    _binary_shapes(x, y, "add")
    out = x.data + y.data

    def vjp(g):
        return _reduce_to(g, x.shape), _reduce_to(g, y.shape)

    return _from_op(out, (x, y), vjp)


def sub(x, y) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    _binary_shapes(x, y, "sub")
    out = x.data - y.data

    def vjp(g):
        return _reduce_to(g, x.shape), _reduce_to(-g, y.shape)

    return _from_op(out, (x, y), vjp)


def mul(x, y) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    _binary_shapes(x, y, "mul")
    out = x.data * y.data

    def vjp(g):
        return _reduce_to(g * y.data, x.shape), _reduce_to(g * x.data, y.shape)

    return _from_op(out, (x, y), vjp)


_RELU_MARGINS: Optional[list] = None


class trace_relu_margins:
    """Context manager that records, for every relu evaluated inside it,
    the smallest |pre-activation|. Finite-difference checks use this to
    reject inputs whose activations sit too close to the kink."""

    def __enter__(self):
        global _RELU_MARGINS
        self._prev = _RELU_MARGINS
        _RELU_MARGINS = []
        return _RELU_MARGINS

    def __exit__(self, *exc):
        global _RELU_MARGINS
        _RELU_MARGINS = self._prev
        return False


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _RELU_MARGINS is not None and x.data.size:
        _RELU_MARGINS.append(float(np.abs(x.data).min()))

    def vjp(g):
        # subgradient at the kink takes the inactive branch (zero)
        return (g * mask,)

    return _from_op(np.where(mask, x.data, 0.0), (x,), vjp)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g.reshape(()), x.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).copy(),)

    return _from_op(out, (x,), vjp)


def reshape_view(x: Tensor, new_shape) -> Tensor:
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape)) != x.size:
        raise ShapeError(f"reshape {x.shape} -> {new_shape}: element count changes")
    out = x.data.reshape(new_shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _from_op(out, (x,), vjp)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat of empty sequence")
    for a, b in zip(xs, xs[1:]):
        sa = list(a.shape)
        sb = list(b.shape)
        if len(sa) != len(sb):
            raise ShapeError(f"concat: ranks differ ({a.shape} vs {b.shape})")
        sa.pop(axis)
        sb.pop(axis)
        if sa != sb:
            raise ShapeError(f"concat: shapes {a.shape} and {b.shape} differ off axis {axis}")
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _from_op(out, xs, vjp)


def matmul(x: Tensor, w: Tensor) -> Tensor:
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"matmul: {x.shape} @ {w.shape}")
    out = x.data @ w.data

    def vjp(g):
        return g @ w.data.T, x.data.T @ g

    return _from_op(out, (x, w), vjp)


def index_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    out = x.data[idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _from_op(out, (x,), vjp)


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dTensor into every requires_grad tensor on the graph.

    Repeated calls without zeroing keep accumulating (summation).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    buf: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = buf.pop(id(node), None)
        if g is None:
            continue
        _check_finite(g, "gradient")
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = buf.get(id(parent))
            buf[id(parent)] = pg if prev is None else prev + pg


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()
