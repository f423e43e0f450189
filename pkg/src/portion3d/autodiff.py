"""Dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float32 by default, float64 for gradient
checking). Operations executed inside a ``with Tape() as tape:`` block are
recorded; ``backward(loss, tape)`` then replays the tape in reverse and
accumulates gradients into every requires_grad leaf. Outside a tape,
operations run eagerly with no recording, which is the inference path.

Reductions accumulate in float64 regardless of storage dtype; matrix
products use the BLAS accumulation of the storage dtype.

A tape is single-threaded; concurrent forward passes must each use their
own tape (the active-tape stack is thread-local).
"""

from __future__ import annotations

import threading
from typing import Callable

import numpy as np

from .errors import DimensionMismatchError, PortionError


class Tensor:
    """Shape-tagged dense value with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise PortionError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value, dtype) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=dtype))


class Tape:
    """Ordered record of executed ops; creation order is topological."""

    def __init__(self):
        self._entries: list[tuple[Tensor, list[tuple[Tensor, Callable]]]] = []

    def __len__(self):
        return len(self._entries)

    def __enter__(self):
        _TAPES.stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.stack.pop()
        assert popped is self
        return False

    def record(self, out: Tensor, inputs: list[tuple[Tensor, Callable]]):
        self._entries.append((out, inputs))

    def outputs(self):
        return {id(out) for out, _ in self._entries}


class _TapeStack(threading.local):
    def __init__(self):
        self.stack: list[Tape] = []


_TAPES = _TapeStack()


def _active_tape() -> Tape | None:
    return _TAPES.stack[-1] if _TAPES.stack else None


def _make_output(data: np.ndarray, parents: list[tuple[Tensor, Callable]]) -> Tensor:
    """Create an op output, recording it when gradients can flow."""
    tracked = [(p, vjp) for p, vjp in parents if p.requires_grad]
    out = Tensor(data, requires_grad=bool(tracked), dtype=data.dtype)
    tape = _active_tape()
    if tape is not None and tracked:
        tape.record(out, tracked)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate gradients of every requires_grad leaf reachable from loss.

    The loss must be a scalar produced on the given tape. Gradients of a
    tensor used several times accumulate; leaf .grad slots also accumulate
    across repeated backward calls until an optimizer step clears them.
    """
    if loss.data.size != 1:
        raise DimensionMismatchError(f"loss must be scalar, got shape {loss.shape}")
    if id(loss) not in tape.outputs():
        raise PortionError("loss tensor was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for out, parents in reversed(tape._entries):
        g = grads.pop(id(out), None)
        holders.pop(id(out), None)
        if g is None:
            continue
        for parent, vjp in parents:
            contribution = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contribution
            else:
                grads[key] = contribution
                holders[key] = parent
    for key, g in grads.items():
        leaf = holders[key]
        if leaf.grad is None:
            leaf.grad = g.astype(leaf.dtype, copy=True)
        else:
            leaf.grad = leaf.grad + g.astype(leaf.dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionMismatchError(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast"
        ) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = a.data + b.data
    return _make_output(
        out,
        [
            (a, lambda g: _unbroadcast(g, a.shape)),
            (b, lambda g: _unbroadcast(g, b.shape)),
        ],
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out = a.data - b.data
    return _make_output(
        out,
        [
            (a, lambda g: _unbroadcast(g, a.shape)),
            (b, lambda g: _unbroadcast(-g, b.shape)),
        ],
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out = a.data * b.data
    return _make_output(
        out,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.shape)),
        ],
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionMismatchError(
            f"matmul: incompatible shapes {a.shape} and {b.shape}"
        )
    out = a.data @ b.data
    return _make_output(
        out,
        [
            (a, lambda g: g @ b.data.T),
            (b, lambda g: a.data.T @ g),
        ],
    )


def relu(t: Tensor) -> Tensor:
    keep = t.data > 0
    out = np.where(keep, t.data, 0)
    return _make_output(out, [(t, lambda g: g * keep)])


def max_over_axis(t: Tensor, axis: int) -> tuple[Tensor, np.ndarray]:
    """Max along an axis; returns (values, argmax indices).

    The gradient routes entirely to the argmax element; ties go to the
    lowest index along the axis (numpy's first-occurrence rule).
    """
    if t.data.ndim == 0:
        raise DimensionMismatchError("max_over_axis needs at least one axis")
    idx = np.argmax(t.data, axis=axis)
    values = np.take_along_axis(t.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def vjp(g, axis=axis, idx=idx, shape=t.shape):
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return full

    return _make_output(values, [(t, vjp)]), idx


def mean_over_axis(t: Tensor, axis: int) -> Tensor:
    out = np.mean(t.data, axis=axis, dtype=np.float64).astype(t.dtype)
    n = t.shape[axis]

    def vjp(g, axis=axis, n=n):
        return np.repeat(np.expand_dims(g / n, axis), n, axis=axis)

    return _make_output(out, [(t, vjp)])


def sum_all(t: Tensor) -> Tensor:
    out = np.asarray(t.data.sum(dtype=np.float64)).astype(t.dtype)
    return _make_output(out, [(t, lambda g: np.broadcast_to(g, t.shape).astype(g.dtype))])


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise DimensionMismatchError(
            f"concat: rank mismatch {a.shape} vs {b.shape}"
        )
    for d in range(a.data.ndim):
        if d != axis % a.data.ndim and a.shape[d] != b.shape[d]:
            raise DimensionMismatchError(
                f"concat: shapes {a.shape} and {b.shape} differ off-axis"
            )
    out = np.concatenate([a.data, b.data], axis=axis)
    split = a.shape[axis % a.data.ndim]

    def take(g, lo, hi, axis=axis):
        slicer = [slice(None)] * g.ndim
        slicer[axis % g.ndim] = slice(lo, hi)
        return g[tuple(slicer)]

    return _make_output(
        out,
        [
            (a, lambda g: take(g, 0, split)),
            (b, lambda g: take(g, split, None)),
        ],
    )


def reshape(t: Tensor, shape) -> Tensor:
    out = t.data.reshape(shape)
    return _make_output(out, [(t, lambda g: g.reshape(t.shape))])


def transpose(t: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = t.data.transpose(axes)
    return _make_output(out, [(t, lambda g: g.transpose(inverse))])


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    batch, chans, height, width = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    cols = np.empty((batch, chans, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride]
    return cols.reshape(batch, chans * kh * kw, out_h * out_w), out_h, out_w


def _col2im(gcols: np.ndarray, xshape, kh: int, kw: int, stride: int, padding: int):
    batch, chans, height, width = xshape
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    g6 = gcols.reshape(batch, chans, kh, kw, out_h, out_w)
    gx = np.zeros((batch, chans, height + 2 * padding, width + 2 * padding), dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += g6[:, :, i, j]
    if padding:
        gx = gx[:, :, padding:-padding, padding:-padding]
    return gx


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of a [C,H,W] or [B,C,H,W] input with [F,C,kh,kw]
    kernels; output spatial size follows the usual (H + 2p - kh)/stride + 1."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.data.ndim != 4 or xd.shape[1] != kernels.shape[1]:
        raise DimensionMismatchError(
            f"conv2d: input {x.shape} incompatible with kernels {kernels.shape}"
        )
    nf, _, kh, kw = kernels.shape
    cols, out_h, out_w = _im2col(xd, kh, kw, stride, padding)
    wmat = kernels.data.reshape(nf, -1)
    out = np.matmul(wmat, cols).reshape(xd.shape[0], nf, out_h, out_w)
    if squeeze:
        out = out[0]

    def vjp_x(g):
        gb = g[None] if squeeze else g
        gflat = gb.reshape(xd.shape[0], nf, out_h * out_w)
        gcols = np.matmul(wmat.T, gflat)
        gx = _col2im(gcols, xd.shape, kh, kw, stride, padding)
        return gx[0] if squeeze else gx

    def vjp_w(g):
        gb = g[None] if squeeze else g
        gflat = gb.reshape(xd.shape[0], nf, out_h * out_w)
        gw = np.matmul(gflat, cols.transpose(0, 2, 1)).sum(axis=0)
        return gw.reshape(kernels.shape)

    return _make_output(out, [(x, vjp_x), (kernels, vjp_w)])


def maxpool2d(t: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling over size x size windows.

    Spatial dims must be divisible by the window size; within a window
    ties route the gradient to the lowest flat (row-major) index.
    """
    squeeze = t.data.ndim == 3
    x = t.data[None] if squeeze else t.data
    batch, chans, height, width = x.shape
    if height % size or width % size:
        raise DimensionMismatchError(
            f"maxpool2d: spatial dims {height}x{width} not divisible by {size}"
        )
    hh, ww = height // size, width // size
    windows = (
        x.reshape(batch, chans, hh, size, ww, size)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, chans, hh, ww, size * size)
    )
    idx = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        out = out[0]

    def vjp(g):
        gb = g[None] if squeeze else g
        gw = np.zeros((batch, chans, hh, ww, size * size), dtype=gb.dtype)
        np.put_along_axis(gw, idx[..., None], gb[..., None], axis=-1)
        gx = (
            gw.reshape(batch, chans, hh, ww, size, size)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, chans, height, width)
        )
        return gx[0] if squeeze else gx

    return _make_output(out, [(t, vjp)])


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error; gradient w.r.t. pred is sign(pred - target)/N."""
    if pred.shape != target.shape:
        raise DimensionMismatchError(
            f"l1_loss: shapes {pred.shape} and {target.shape} differ"
        )
    if pred.size == 0:
        raise DimensionMismatchError("l1_loss: empty batch")
    diff = pred.data.astype(np.float64) - target.data.astype(np.float64)
    out = np.asarray(np.mean(np.abs(diff))).astype(pred.dtype)
    sign = np.sign(diff) / pred.size

    def vjp_pred(g):
        return (g * sign).astype(pred.dtype)

    def vjp_target(g):
        return (-g * sign).astype(target.dtype)

    return _make_output(out, [(pred, vjp_pred), (target, vjp_target)])


def seeded_init(shape, scheme: str = "uniform_fan_in", seed: int = 0, dtype=np.float32) -> Tensor:
    """Deterministic parameter initialization.

    uniform_fan_in draws U(-1/sqrt(fan_in), +1/sqrt(fan_in)) where fan_in
    is the leading dimension for 1-D/2-D shapes and the product of the
    trailing dimensions for convolution kernels.
    """
    shape = tuple(int(s) for s in shape)
    if scheme == "zeros":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
    if scheme != "uniform_fan_in":
        raise PortionError(f"unknown init scheme {scheme!r}")
    if len(shape) <= 2:
        fan_in = shape[0] if shape else 1
    else:
        fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / np.sqrt(fan_in)
    rng = np.random.default_rng(seed)
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


class ParameterSet:
    """Named, ordered map of trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise PortionError(f"duplicate parameter name {name!r}")
        if not tensor.requires_grad:
            raise PortionError(f"parameter {name!r} must require gradients")
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grads(self):
        for p in self._params.values():
            p.grad = None


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: int = 0


def sgd_step(params: ParameterSet, lr: float) -> None:
    for name, p in params.items():
        if p.grad is None:
            raise PortionError(f"parameter {name!r} has no gradient; run backward first")
        p.data = p.data - np.asarray(lr, dtype=p.dtype) * p.grad
        p.grad = None


def adam_step(
    params: ParameterSet,
    lr: float,
    state: AdamState,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    state.t += 1
    t = state.t
    for name, p in params.items():
        if p.grad is None:
            raise PortionError(f"parameter {name!r} has no gradient; run backward first")
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data = p.data - (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        p.grad = None
