"""Dense tensors, numerical kernels, and a reverse-mode gradient tape.

Tensors wrap a numpy array in either float32 (training default) or float64
(verification mode, switched via `use_dtype`). Every kernel has a hand-written
vector-Jacobian product recorded on the active `Tape`; calling `backward` on a
scalar loss replays the tape in reverse and leaves gradients on the trainable
leaf tensors it reaches.
"""

from __future__ import annotations

import contextlib
import math
from collections.abc import Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError

_DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.float32, np.float64)


def default_dtype() -> np.dtype:
    """Element dtype used for tensors created from raw data."""
    return np.dtype(_DEFAULT_DTYPE)


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt.type not in _FLOAT_DTYPES:
        raise ContractError(f"default dtype must be float32 or float64, got {dt}")
    _DEFAULT_DTYPE = dt.type


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily switch the default element precision (e.g. np.float64)."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


class Tensor:
    """Dense n-dimensional real array, optionally tracked for gradients.

    `data` is always a float32 or float64 numpy array. `grad`, populated by
    `backward`, is a plain numpy array of the same shape (overwritten, not
    accumulated, on each backward call).
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        else:
            arr = np.asarray(data)
            if arr.dtype.type not in _FLOAT_DTYPES:
                arr = arr.astype(default_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad, dtype=self.data.dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # Arithmetic sugar over the kernel functions below.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_tensor(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of executed operations for one reverse pass.

    Each entry holds the output tensor, its input tensors, and a closure
    computing the vector-Jacobian product. The tape is single-writer: one
    training step owns it exclusively.
    """

    def __init__(self):
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], callable]] = []
        self._output_ids: set[int] = set()

    def __len__(self) -> int:
        return len(self._ops)

    def record(self, out: Tensor, inputs: Sequence[Tensor], vjp) -> None:
        self._ops.append((out, tuple(inputs), vjp))
        self._output_ids.add(id(out))

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPES.pop()


def active_tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _maybe_record(out: Tensor, inputs: Sequence[Tensor], vjp) -> None:
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, inputs, vjp)


def record_op(out: Tensor, inputs: Sequence[Tensor], vjp) -> None:
    """Record a custom operation on the active tape (used by fused losses)."""
    _maybe_record(out, inputs, vjp)


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] | None = None) -> None:
    """Reverse pass: populate `.grad` on trainable leaf tensors.

    Walks the tape once in reverse order, accumulating vector-Jacobian
    products. Trainable leaves reached by the loss get their gradient;
    tensors in `params` that the loss never touched get a zero gradient of
    matching shape. Gradients from a previous backward call are overwritten.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if id(loss) not in tape._output_ids:
        raise ContractError("loss tensor was not produced through this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, vjp in reversed(tape._ops):
        g_out = grads.pop(id(out), None)
        if g_out is None:
            continue
        for inp, g in zip(inputs, vjp(g_out)):
            if g is None or not inp.requires_grad:
                continue
            acc = grads.get(id(inp))
            grads[id(inp)] = g if acc is None else acc + g

    seen: set[int] = set()
    for _, inputs, _ in tape._ops:
        for inp in inputs:
            if id(inp) in seen:
                continue
            seen.add(id(inp))
            if inp.requires_grad and id(inp) not in tape._output_ids:
                inp.grad = grads.get(id(inp), np.zeros_like(inp.data))
    if params is not None:
        for p in params:
            if id(p) not in seen or p.grad is None:
                p.grad = np.zeros_like(p.data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    _maybe_record(out, (a, b), vjp)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    _maybe_record(out, (a, b), vjp)
    return out


def matmul(a, b) -> Tensor:
    """Matrix product C[i,j] = sum_t A[i,t] B[t,j], batched over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs matrices, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner extents differ: {a.shape} x {b.shape}"
        )
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def vjp(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    _maybe_record(out, (a, b), vjp)
    return out


def softmax(x, axis: int = -1) -> Tensor:
    """Stable softmax along `axis`: exp(x - max) / sum(exp(x - max))."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y, requires_grad=x.requires_grad)

    def vjp(g):
        inner = np.sum(g * y, axis=axis, keepdims=True)
        return (y * (g - inner),)

    _maybe_record(out, (x,), vjp)
    return out


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance, then
    apply the learned affine map gamma * x_hat + beta."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm gamma/beta must have shape ({d},), "
            f"got {gamma.shape} and {beta.shape}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = Tensor(
        gamma.data * xhat + beta.data,
        requires_grad=x.requires_grad or gamma.requires_grad or beta.requires_grad,
    )

    def vjp(g):
        reduce_axes = tuple(range(g.ndim - 1))
        g_gamma = (g * xhat).sum(axis=reduce_axes) if gamma.requires_grad else None
        g_beta = g.sum(axis=reduce_axes) if beta.requires_grad else None
        g_xhat = g * gamma.data
        gx = inv * (
            g_xhat
            - g_xhat.mean(axis=-1, keepdims=True)
            - xhat * (g_xhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gamma, g_beta

    _maybe_record(out, (x, gamma, beta), vjp)
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x) -> Tensor:
    """Exact GELU: x * Phi(x) with Phi the standard normal CDF (via erf)."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * cdf, requires_grad=x.requires_grad)

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    _maybe_record(out, (x,), vjp)
    return out


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape), requires_grad=x.requires_grad)

    def vjp(g):
        return (g.reshape(x.shape),)

    _maybe_record(out, (x,), vjp)
    return out


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    out = Tensor(x.data.transpose(axes), requires_grad=x.requires_grad)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inverse),)

    _maybe_record(out, (x,), vjp)
    return out


def slice_tensor(x, key) -> Tensor:
    """Basic slicing with gradient scatter back into the source shape."""
    x = as_tensor(x)
    out = Tensor(np.ascontiguousarray(x.data[key]), requires_grad=x.requires_grad)

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    _maybe_record(out, (x,), vjp)
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        requires_grad=any(t.requires_grad for t in tensors),
    )
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    _maybe_record(out, tensors, vjp)
    return out


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    out = Tensor(
        np.ascontiguousarray(np.broadcast_to(x.data, shape)),
        requires_grad=x.requires_grad,
    )

    def vjp(g):
        return (_unbroadcast(g, x.shape),)

    _maybe_record(out, (x,), vjp)
    return out


def tensor_sum(x, axis=None) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.sum(x.data, axis=axis), requires_grad=x.requires_grad)

    def vjp(g):
        if axis is None:
            return (np.full_like(x.data, 1.0) * g,)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    _maybe_record(out, (x,), vjp)
    return out


def tensor_mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return mul(tensor_sum(x, axis=axis), 1.0 / count)
