"""Small reverse-mode autodiff engine over float64 numpy arrays.

Every differentiable op builds an output :class:`Tensor` holding references to
its parents plus a closure mapping the upstream gradient to one gradient per
parent. :func:`backward` walks the graph in reverse topological order and
accumulates into ``.grad`` of the leaves that require gradients.

Shapes never broadcast implicitly. Binary ops demand identical shapes, and
callers expand operands with :func:`tile` / :func:`reshape` first. The only
exception is a plain Python scalar operand.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_node_ids = itertools.count()
_grad_enabled = True


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


TensorLike = Tensor | np.ndarray | float


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block; outputs are plain constants."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


@contextlib.contextmanager
def frozen(params: Iterable[Tensor]):
    """Temporarily stop gradients from reaching ``params``."""
    params = list(params)
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node_id = next(_node_ids)
    out.name = None
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        # frozen params are dropped here so they stay excluded after the context exits
        out._parents = tuple(p if p.requires_grad else None for p in parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


# ---------------------------------------------------------------- dense layers


def affine(x: TensorLike, W: Tensor, b: Tensor) -> Tensor:
    """Row-wise ``x @ W + b`` over the last axis of ``x``."""
    x = as_tensor(x)
    if W.ndim != 2 or b.shape != (W.shape[1],) or x.ndim < 1 or x.shape[-1] != W.shape[0]:
        raise DimensionError(
            f"affine: x{x.shape} incompatible with W{W.shape} and b{b.shape}"
        )
    d_in, d_out = W.shape
    flat = x.data.reshape(-1, d_in)
    out = (flat @ W.data + b.data).reshape(x.shape[:-1] + (d_out,))

    def backward(g):
        g2 = g.reshape(-1, d_out)
        gx = (g2 @ W.data.T).reshape(x.shape) if x.requires_grad else None
        gW = flat.T @ g2 if W.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gW, gb

    return _result(out, (x, W, b), backward)


def relu(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def reduce_max(x: TensorLike, axis: int) -> Tensor:
    """Max over ``axis``; the gradient goes to the first maximal entry."""
    x = as_tensor(x)
    axis = _axis(x, axis)
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _result(out, (x,), backward)


# ------------------------------------------------------------- data movement


def concat(tensors: Sequence[TensorLike], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = _axis(tensors[0], axis)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != axis
        ):
            raise DimensionError(f"concat along {axis}: shapes {ref} and {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tuple(tensors), backward)


def reshape(x: TensorLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size or any(s <= 0 for s in shape):
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def tile(x: TensorLike, axis: int, count: int) -> Tensor:
    """Repeat the whole tensor ``count`` times along ``axis``."""
    x = as_tensor(x)
    axis = _axis(x, axis)
    if count < 1:
        raise DimensionError(f"tile: count must be positive, got {count}")
    reps = [1] * x.ndim
    reps[axis] = count
    out = np.tile(x.data, reps)

    def backward(g):
        split = g.shape[:axis] + (count, x.shape[axis]) + g.shape[axis + 1:]
        return (g.reshape(split).sum(axis=axis),)

    return _result(out, (x,), backward)


def slice_axis(x: TensorLike, axis: int, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    axis = _axis(x, axis)
    n = x.shape[axis]
    if not 0 <= start < stop <= n:
        raise DimensionError(f"slice [{start}:{stop}] invalid for extent {n} of {x.shape}")
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return _result(x.data[sl], (x,), backward)


def gather(x: TensorLike, index: np.ndarray) -> Tensor:
    """Pick rows along the second-to-last axis.

    ``x`` has shape ``(*batch, n, d)`` and ``index`` integer shape
    ``(*batch, k)``; the result has shape ``(*batch, k, d)``.
    """
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if x.ndim < 2 or index.shape[:-1] != x.shape[:-2]:
        raise DimensionError(f"gather: index {index.shape} does not match x{x.shape}")
    n, d = x.shape[-2:]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise DimensionError(f"gather: index out of range for {n} rows")
    batch = int(np.prod(x.shape[:-2], dtype=np.int64))
    k = index.shape[-1]
    flat_idx = (index.reshape(batch, k) + (np.arange(batch) * n)[:, None]).reshape(-1)
    out = x.data.reshape(batch * n, d)[flat_idx].reshape(index.shape + (d,))

    def backward(g):
        g2 = g.reshape(-1, d)
        gx = np.empty((batch * n, d))
        for c in range(d):
            gx[:, c] = np.bincount(flat_idx, weights=g2[:, c], minlength=batch * n)
        return (gx.reshape(x.shape),)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------- elementwise


def add(x: TensorLike, y: TensorLike) -> Tensor:
    x = as_tensor(x)
    if np.isscalar(y):
        c = float(y)
        return _result(x.data + c, (x,), lambda g: (g,))
    y = as_tensor(y)
    _same_shape("add", x, y)
    return _result(x.data + y.data, (x, y), lambda g: (g, g))


def sub(x: TensorLike, y: TensorLike) -> Tensor:
    x = as_tensor(x)
    if np.isscalar(y):
        c = float(y)
        return _result(x.data - c, (x,), lambda g: (g,))
    y = as_tensor(y)
    _same_shape("sub", x, y)
    return _result(x.data - y.data, (x, y), lambda g: (g, -g))


def neg(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    return _result(-x.data, (x,), lambda g: (-g,))


def mul(x: TensorLike, y: TensorLike) -> Tensor:
    x = as_tensor(x)
    if np.isscalar(y):
        c = float(y)
        return _result(x.data * c, (x,), lambda g: (g * c,))
    y = as_tensor(y)
    _same_shape("mul", x, y)
    return _result(x.data * y.data, (x, y), lambda g: (g * y.data, g * x.data))


def square(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    return _result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def norm(x: TensorLike, axis: int = -1) -> Tensor:
    """Euclidean norm over ``axis``; gradient taken as zero at the origin."""
    x = as_tensor(x)
    axis = _axis(x, axis)
    n = np.sqrt(np.sum(x.data * x.data, axis=axis))

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        return (x.data * np.expand_dims(scale, axis),)

    return _result(n, (x,), backward)


def sum(x: TensorLike, axis: int | None = None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    if axis is None:
        return _result(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))
    axis = _axis(x, axis)
    out = x.data.sum(axis=axis)
    return _result(
        out, (x,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)
    )


def mean(x: TensorLike, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[_axis(x, axis)]
    return mul(sum(x, axis), 1.0 / count)


# ------------------------------------------------------------------- backward


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent is not None and parent.node_id not in seen:
                stack.append((parent, False))
    return order


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into every reachable leaf's ``.grad``."""
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return
    grads: dict[int, np.ndarray] = {output.node_id: np.ones_like(output.data)}
    for node in reversed(_topological(output)):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or parent is None:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg
