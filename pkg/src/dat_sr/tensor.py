"""Dense float tensors with reverse-mode automatic differentiation.

Values are stored as contiguous row-major numpy arrays, float32 by default.
Float64 tensors are supported for gradient checking; mixing the two dtypes in
one operation is an error so precision changes stay explicit.  The canonical
image layout is NCHW.

Every operation is a pure function of its inputs.  When gradients are enabled
and an input requires them, the output records its parents and a backward
closure; ``Tensor.backward`` replays the recorded graph in reverse topological
order, accumulating gradients additively at fan-out.  Tensors are treated as
immutable after construction -- the only sanctioned mutation points are the
optimizer and the weight loader, each a single-writer path.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class ConfigError(ValueError):
    """Raised for invalid layer or model configuration."""


class GraphError(RuntimeError):
    """Raised when backward is invoked without a usable recorded graph."""


_ALLOWED = (np.float32, np.float64)
_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (inference paths)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in _ALLOWED:
            arr = arr.astype(np.float32)
        if arr.ndim > 0 and min(arr.shape) < 1:
            raise ShapeError(f"all extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- metadata ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    # -- autodiff ---------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse-mode sweep from this tensor through the recorded graph."""
        if not self.requires_grad:
            raise GraphError("backward called on a tensor with no recorded graph")
        if grad is None:
            if self.size != 1:
                raise GraphError("implicit seed gradient requires a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_operand(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, new_shape) -> "Tensor":
        return reshape_view(self, new_shape)

    def permute(self, axis_order) -> "Tensor":
        return permute(self, axis_order)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def abs(self) -> "Tensor":
        return tensor_abs(self)

    def exp(self) -> "Tensor":
        return tensor_exp(self)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as_operand(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# -- shape plumbing ---------------------------------------------------------


def reshape_view(t: Tensor, new_shape) -> Tensor:
    new_shape = tuple(int(e) for e in new_shape)
    if any(e < 1 for e in new_shape):
        raise ShapeError(f"reshape target extents must be >= 1, got {new_shape}")
    if int(np.prod(new_shape, dtype=np.int64)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {new_shape}")
    old_shape = t.shape

    def backward(g: np.ndarray) -> None:
        t._accumulate(g.reshape(old_shape))

    return _result(t.data.reshape(new_shape), (t,), backward)


def permute(t: Tensor, axis_order) -> Tensor:
    order = tuple(int(a) for a in axis_order)
    if sorted(order) != list(range(t.ndim)):
        raise ShapeError(f"invalid permutation {order} for rank {t.ndim}")
    inverse = np.argsort(order)

    def backward(g: np.ndarray) -> None:
        t._accumulate(np.ascontiguousarray(g.transpose(inverse)))

    return _result(np.ascontiguousarray(t.data.transpose(order)), (t,), backward)


def _reduce_batch_grad(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a matmul gradient down to the operand's (possibly broadcast) shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis in range(g.ndim - 2):
        if shape[axis] == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch extents incompatible: {a.shape} x {b.shape}") from exc

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_reduce_batch_grad(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_reduce_batch_grad(gb, b.shape))

    return _result(data, (a, b), backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    # b may only expand along its own singleton axes; no implicit rank promotion.
    if a.ndim != b.ndim:
        raise ShapeError(f"{op}: rank mismatch {a.shape} vs {b.shape} (no implicit rank promotion)")
    for ea, eb in zip(a.shape, b.shape):
        if eb != ea and eb != 1 and ea != 1:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable")


def _elementwise(op: str, a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        scalar = a.dtype.type(b)

        def backward_scalar(g: np.ndarray) -> None:
            if op == "mul":
                a._accumulate(g * scalar)
            else:
                a._accumulate(g)

        if op == "add":
            return _result(a.data + scalar, (a,), backward_scalar)
        if op == "sub":
            return _result(a.data - scalar, (a,), backward_scalar)
        return _result(a.data * scalar, (a,), backward_scalar)

    _check_same_dtype(a, b, op)
    if b.ndim == 0 or a.ndim == 0:
        pass  # true scalars broadcast freely
    else:
        _check_broadcast(a, b, op)
    if op == "add":
        data = a.data + b.data
    elif op == "sub":
        data = a.data - b.data
    else:
        data = a.data * b.data

    def backward(g: np.ndarray) -> None:
        if op == "mul":
            if a.requires_grad:
                a._accumulate(_unbroadcast_to(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast_to(g * a.data, b.shape))
        else:
            if a.requires_grad:
                a._accumulate(_unbroadcast_to(g, a.shape))
            if b.requires_grad:
                gb = g if op == "add" else -g
                b._accumulate(_unbroadcast_to(gb, b.shape))

    return _result(data, (a, b), backward)


def _unbroadcast_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return _unbroadcast(g, shape).reshape(shape)


def add(a: Tensor, b) -> Tensor:
    return _elementwise("add", a, b)


def sub(a: Tensor, b) -> Tensor:
    return _elementwise("sub", a, b)


def mul(a: Tensor, b) -> Tensor:
    return _elementwise("mul", a, b)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    rank = tensors[0].ndim
    axis = axis % rank
    for t in tensors[1:]:
        if t.ndim != rank:
            raise ShapeError("concat operands must share rank")
        for ax in range(rank):
            if ax != axis and t.shape[ax] != tensors[0].shape[ax]:
                raise ShapeError(f"concat extent mismatch on axis {ax}: {t.shape} vs {tensors[0].shape}")
        _check_same_dtype(tensors[0], t, "concat")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * rank
                index[axis] = slice(start, stop)
                t._accumulate(g[tuple(index)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def split(t: Tensor, axis: int, sizes: Sequence[int]) -> list[Tensor]:
    axis = axis % t.ndim
    sizes = [int(s) for s in sizes]
    if any(s < 1 for s in sizes) or sum(sizes) != t.shape[axis]:
        raise ShapeError(f"split sizes {sizes} do not partition extent {t.shape[axis]}")
    pieces: list[Tensor] = []
    start = 0
    for size in sizes:
        stop = start + size
        index = [slice(None)] * t.ndim
        index[axis] = slice(start, stop)
        index = tuple(index)

        def backward(g: np.ndarray, index=index) -> None:
            full = np.zeros_like(t.data)
            full[index] = g
            t._accumulate(full)

        pieces.append(_result(np.ascontiguousarray(t.data[index]), (t,), backward))
        start = stop
    return pieces


def cyclic_roll(t: Tensor, shifts: tuple[int, int]) -> Tensor:
    """Roll the trailing two (spatial) axes: out[y, x] = in[(y-dy) % H, (x-dx) % W]."""
    if t.ndim < 2:
        raise ShapeError("cyclic_roll requires spatial (trailing two) axes")
    dy, dx = int(shifts[0]), int(shifts[1])
    axes = (t.ndim - 2, t.ndim - 1)

    def backward(g: np.ndarray) -> None:
        t._accumulate(np.roll(g, shift=(-dy, -dx), axis=axes))

    return _result(np.roll(t.data, shift=(dy, dx), axis=axes), (t,), backward)


# -- reductions and pointwise helpers ---------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tensor_sum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, t.ndim)
    data = t.data.sum(axis=axes, keepdims=keepdims)

    def backward(g: np.ndarray) -> None:
        gg = g
        if not keepdims:
            for ax in sorted(axes):
                gg = np.expand_dims(gg, ax)
        t._accumulate(np.broadcast_to(gg, t.shape).astype(t.dtype, copy=False))

    return _result(data, (t,), backward)


def tensor_mean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, t.ndim)
    count = int(np.prod([t.shape[a] for a in axes])) if t.ndim else 1
    return mul(tensor_sum(t, axis=axis, keepdims=keepdims), 1.0 / count)


def tensor_abs(t: Tensor) -> Tensor:
    sign = np.sign(t.data)

    def backward(g: np.ndarray) -> None:
        t._accumulate(g * sign)

    return _result(np.abs(t.data), (t,), backward)


def tensor_exp(t: Tensor) -> Tensor:
    data = np.exp(t.data)

    def backward(g: np.ndarray) -> None:
        t._accumulate(g * data)

    return _result(data, (t,), backward)
