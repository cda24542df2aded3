"""Dense tensors with reverse-mode differentiation over a dynamic tape.

Operations record themselves on the active :class:`GradientTape` (if any) when at
least one input requires a gradient. ``backward`` replays the tape in reverse
creation order, which is a valid topological order because a node can only be
recorded after all of its parents exist.
"""

from __future__ import annotations

import contextlib
import os
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_DEBUG = os.environ.get("PFAN_DEBUG", "0") not in ("", "0")

_default_dtype = np.dtype(np.float32)
_tape_stack: list["GradientTape"] = []
_branch_log: Optional[list] = None


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


class ContractError(RuntimeError):
    """Raised when an operation is called outside its preconditions."""


def default_dtype() -> np.dtype:
    return _default_dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors and parameters."""
    global _default_dtype
    prev = _default_dtype
    _default_dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _default_dtype = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "_node", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype.kind == "f":
            arr = data
        else:
            arr = np.asarray(data, dtype=_default_dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._node: Optional[_Node] = None

    @property
    def dims(self) -> tuple:
        return self.data.shape

    shape = dims

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got dims {self.dims}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(dims={self.dims}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: Tensor, parents: tuple, backward: Callable):
        self.out = out
        self.parents = parents
        self.backward = backward


class GradientTape:
    """Append-only record of differentiable operations.

    Use as a context manager; operations executed inside the block whose inputs
    require gradients are recorded. The tape is consumed by :func:`backward`.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self):
        if self.consumed:
            raise ContractError("tape already consumed by backward")
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def release(self) -> None:
        """Drop recorded closures; breaks the out <-> node cycles so saved
        buffers are freed immediately instead of at the next GC pass."""
        for node in self.nodes:
            node.out = None
            node.parents = ()
            node.backward = None
        self.nodes.clear()

    def record(self, out: Tensor, parents: tuple, fn: Callable) -> None:
        node = _Node(out, parents, fn)
        out._node = node
        out.requires_grad = True
        self.nodes.append(node)


def active_tape() -> Optional[GradientTape]:
    return _tape_stack[-1] if _tape_stack else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording, e.g. for evaluation."""
    saved = list(_tape_stack)
    _tape_stack.clear()
    try:
        yield
    finally:
        _tape_stack.extend(saved)


@contextlib.contextmanager
def record_branches():
    """Collect the discrete decisions (ReLU signs, pooling argmax, sampling
    cells, ...) taken by piecewise operations; used to detect kinks."""
    global _branch_log
    saved = _branch_log
    _branch_log = []
    try:
        yield _branch_log
    finally:
        _branch_log = saved


def note_branch(decision: np.ndarray) -> None:
    if _branch_log is not None:
        _branch_log.append(np.array(decision, copy=True))


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else _default_dtype
    return Tensor(np.asarray(x, dtype=dtype))


def make_op(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    """Wrap a forward result and record its backward closure.

    ``fn(grad)`` must return one gradient (or None) per parent, in order.
    """
    out = Tensor(data)
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by forward op")
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, tuple(parents), fn)
    return out


def backward(tape: GradientTape, root: Tensor) -> dict:
    """Propagate d(root)/d(.) through ``tape``; return ``{leaf: gradient}``.

    Leaves are tensors that require a gradient but were not produced by a
    recorded operation (parameters and differentiable inputs).
    """
    if root.data.size != 1 or any(d != 1 for d in root.dims):
        raise ContractError(f"backward needs a scalar root, got dims {root.dims}")
    if tape.consumed:
        raise ContractError("tape already consumed by backward")
    tape.consumed = True
    if root._node is None:
        tape.release()
        if root.requires_grad:
            return {root: np.ones_like(root.data)}
        return {}

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        parent_grads = node.backward(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if parent._node is None:
                leaves[key] = parent
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    tape.release()
    return {leaf: grads[k] for k, leaf in leaves.items()}


# ---------------------------------------------------------------- elementwise


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim != b.ndim or any(x != y and x != 1 and y != 1 for x, y in zip(a.shape, b.shape)):
        raise ShapeError(f"incompatible dims {a.shape} and {b.shape}")


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum(), dtype=grad.dtype)
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


def _binary(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast(a.data, b.data)
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary(a, b)
    sa, sb = a.dims, b.dims
    return make_op(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)
    sa, sb = a.dims, b.dims
    return make_op(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b), lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)

    return make_op(out, (a, b), back)


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, factor: float) -> Tensor:
    f = a.data.dtype.type(factor)
    return make_op(a.data * f, (a,), lambda g: (g * f,))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    note_branch(pos)
    return make_op(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,))


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    s = a.dtype.type(slope)
    fac = np.where(a.data > 0, a.dtype.type(1), s)
    note_branch(fac)
    return make_op(a.data * fac, (a,), lambda g: (g * fac,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return make_op(x * x, (a,), lambda g: (2 * g * x,))


def absolute(a: Tensor) -> Tensor:
    x = a.data
    note_branch(np.sign(x))
    return make_op(np.abs(x), (a,), lambda g: (g * np.sign(x),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return make_op(y, (a,), lambda g: (g * y,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient passes only where the value was inside."""
    x = a.data
    inside = (x >= lo) & (x <= hi)
    note_branch(inside)
    return make_op(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------- reductions


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.dims
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(np.asarray(out, dtype=a.dtype), (a,), back)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else int(np.prod([a.dims[i] for i in np.atleast_1d(axis)]))
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def scalar_total(a: Tensor) -> Tensor:
    """Sum to a rank-preserving scalar with all extents 1."""
    return reduce_sum(a, axis=tuple(range(a.data.ndim)), keepdims=True)


# ---------------------------------------------------------------- structure


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of zero tensors")
    if len(parts) == 1:
        return parts[0]
    ref = parts[0].dims
    for p in parts[1:]:
        if p.data.ndim != len(ref) or any(
            i != axis and x != y for i, (x, y) in enumerate(zip(p.dims, ref))
        ):
            raise ShapeError(f"concat mismatch: {ref} vs {p.dims} along axis {axis}")
    bounds = np.cumsum([p.dims[axis] for p in parts])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(np.concatenate([p.data for p in parts], axis=axis), parts, back)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Channel-direction concatenation of rank-4 tensors."""
    return concat(parts, axis=1)


def take(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice along one axis."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape, dtype = a.dims, a.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return make_op(a.data[idx].copy(), (a,), back)


def split(a: Tensor, sizes: Sequence[int], axis: int = 0) -> list:
    out, start = [], 0
    for s in sizes:
        out.append(take(a, start, start + s, axis))
        start += s
    return out


def repeat_batch(a: Tensor, times: int) -> Tensor:
    """Tile along the batch axis (blocks of the full batch, repeated)."""
    n = a.dims[0]
    reps = (times,) + (1,) * (a.data.ndim - 1)

    def back(g):
        return (g.reshape((times, n) + g.shape[1:]).sum(axis=0),)

    return make_op(np.tile(a.data, reps), (a,), back)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.dims
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def stack_values(values: Iterable[Tensor]) -> np.ndarray:
    return np.stack([v.data for v in values])
