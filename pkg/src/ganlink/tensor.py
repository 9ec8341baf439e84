"""Minimal n-dimensional tensor with tape-based reverse-mode differentiation.

Only the operations needed by the GAN, autoencoder and BiDNN models live here.
Operations are recorded on the innermost active :class:`Tape`; outside of any
tape (or when no input requires a gradient) they run as plain numpy code, which
is how inference stays cheap.

Typical use::

    with Tape() as tape:
        loss = bce_loss(sigmoid(dense(x, w, b)), 1)
    tape.backward(loss)
"""

from __future__ import annotations

import contextlib
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, NonFiniteError, UsageError

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
SCORE_EPS = 1e-7

_PRECISIONS = {"standard": np.float32, "high": np.float64}
_precision = os.environ.get("HYPERLINK_PRECISION", "standard").strip().lower()
if _precision not in _PRECISIONS:
    _precision = "standard"

_local = threading.local()


def get_dtype():
    return _PRECISIONS[_precision]


def set_precision(mode: str) -> None:
    """Switch between 32-bit ("standard") and 64-bit ("high") reals."""
    global _precision
    if mode not in _PRECISIONS:
        raise ConfigError(f"unknown precision {mode!r}; expected one of {sorted(_PRECISIONS)}")
    _precision = mode


@contextlib.contextmanager
def precision(mode: str):
    previous = _precision
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(previous)


class Tensor:
    """Real n-d array plus an optional accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_recorded")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or get_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(())
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor {name or ''} of shape {arr.shape}".replace("  ", " "))
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._recorded = False

    @property
    def shape(self) -> tuple:
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
        if self.data.size != 1:
            raise UsageError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


@dataclass
class _Node:
    output: Tensor
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class Tape:
    """Ordered record of executed operations.

    Entering the tape as a context manager makes it the recording target for
    the current thread. Tapes nest; only the innermost one records.
    """

    nodes: list = field(default_factory=list)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def record(self, output: Tensor, inputs: tuple, backward, op: str) -> None:
        output._recorded = True
        self.nodes.append(_Node(output, inputs, backward, op))

    def ops(self) -> list[str]:
        return [n.op for n in self.nodes]

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_record():
    """Suspend recording on the current thread."""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def _emit(data: np.ndarray, inputs: tuple, backward_fn, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward_fn, op)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Nodes are replayed in exact reverse execution order. Repeated calls add to
    existing leaf gradients.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss._recorded or not any(n.output is loss for n in reversed(tape.nodes)):
        raise UsageError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise DimensionError(f"{node.op}: gradient shape {gi.shape} does not match input {t.shape}")
            if t._recorded:
                key = id(t)
                grads[key] = grads[key] + gi if key in grads else gi
            else:
                t.grad = gi.copy() if t.grad is None else t.grad + gi


# ---------------------------------------------------------------------------
# elementwise and structural ops


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _emit(out, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _emit(out, (a, b), bw, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    return _emit(a.data * a.data.dtype.type(factor), (a,), lambda g: (g * factor,), "scale")


def tsum(a: Tensor) -> Tensor:
    return _emit(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,),
                 lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    return _emit(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,),
                 lambda g: (np.full(a.shape, g / n, dtype=a.data.dtype),), "mean")


def reshape(a: Tensor, shape: tuple) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from exc
    return _emit(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def transpose(a: Tensor) -> Tensor:
    """Swap the two axes of a matrix. The result is a view of the same storage."""
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _emit(a.data.T, (a,), lambda g: (g.T,), "transpose")


def tile_spatial(a: Tensor, size: int) -> Tensor:
    """Replicate an N×C tensor across a size×size grid, giving N×C×size×size."""
    if a.ndim != 2:
        raise DimensionError(f"tile_spatial expects N×C, got shape {a.shape}")
    out = np.ascontiguousarray(np.broadcast_to(a.data[:, :, None, None], a.shape + (size, size)))
    return _emit(out, (a,), lambda g: (g.sum(axis=(2, 3)),), "tile_spatial")


def concat(inputs: Sequence[Tensor], axis: int = 1) -> Tensor:
    inputs = tuple(inputs)
    if not inputs:
        raise DimensionError("concat needs at least one tensor")
    ref = inputs[0].shape
    ax = axis % len(ref)
    for t in inputs[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise DimensionError(
                f"concat on axis {axis}: shapes {[x.shape for x in inputs]} differ off-axis")
    if len(inputs) == 1:
        return _emit(inputs[0].data.copy(), inputs, lambda g: (g,), "concat")
    out = np.concatenate([t.data for t in inputs], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in inputs])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _emit(out, inputs, bw, "concat")


# ---------------------------------------------------------------------------
# activations


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    neg = x.data < 0
    out = np.where(neg, x.data * x.data.dtype.type(slope), x.data)
    return _emit(out, (x,), lambda g: (np.where(neg, g * slope, g),), "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _emit(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    half = x.data.dtype.type(0.5)
    out = half * (1 + np.tanh(half * x.data))
    return _emit(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def activation(x: Tensor, kind: str, slope: float = LEAKY_SLOPE) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# dense / convolution


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight + bias for x of shape N×I and weight I×O."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def bw(g):
        return (g @ weight.data.T if x.requires_grad else None,
                x.data.T @ g if weight.requires_grad else None,
                g.sum(axis=0) if bias is not None and bias.requires_grad else None)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit(out, inputs, bw, "dense")


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if stride < 1 or span < 0 or span % stride:
        raise ConfigError(
            f"convolution geometry gives non-integral output: size={size} k={k} stride={stride} padding={padding}")
    return span // stride + 1


def deconv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    out = (size - 1) * stride - 2 * padding + k
    if stride < 1 or out < 1:
        raise ConfigError(
            f"transposed convolution geometry gives empty output: size={size} k={k} stride={stride} padding={padding}")
    return out


def _windows(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


# Stride-1 convolutions use a flat-shift layout: with the padded input stored as
# C×(N·Hp·Wp) plus a zero tail, kernel offset (i, j) is the contiguous slice
# starting at i·Wp + j, so each offset is one matmul without an im2col copy.

def _flat_padded(x: np.ndarray, k: int, padding: int) -> tuple[np.ndarray, int]:
    n, c, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    length = n * hp * wp
    flat = np.zeros((c, length + (k - 1) * (wp + 1)), dtype=x.dtype)
    view = flat[:, :length].reshape(c, n, hp, wp)
    view[:, :, padding:padding + h, padding:padding + w] = x.transpose(1, 0, 2, 3)
    return flat, length


def _flat_grad(g: np.ndarray, hp: int, wp: int) -> np.ndarray:
    n, f, ho, wo = g.shape
    full = np.zeros((f, n, hp, wp), dtype=g.dtype)
    full[:, :, :ho, :wo] = g.transpose(1, 0, 2, 3)
    return full.reshape(f, -1)


def _correlate(x: np.ndarray, kern: np.ndarray, stride: int, padding: int) -> np.ndarray:
    # x: N×C×H×W, kern: F×C×k×k -> N×F×H'×W'
    n, c, h, w = x.shape
    f, _, k, _ = kern.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    if stride == 1:
        flat, length = _flat_padded(x, k, padding)
        stacked = np.ascontiguousarray(kern.transpose(2, 3, 0, 1)).reshape(k * k * f, c) @ flat
        full = np.zeros((f, length), dtype=stacked.dtype)
        for i in range(k):
            for j in range(k):
                off, row = i * wp + j, (i * k + j) * f
                full += stacked[row:row + f, off:off + length]
        out = full.reshape(f, n, hp, wp)[:, :, :ho, :wo]
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i:i + hs:stride, j:j + ws:stride]
    out = kern.reshape(f, -1) @ cols.reshape(c * k * k, -1)
    return np.ascontiguousarray(out.reshape(f, n, ho, wo).transpose(1, 0, 2, 3))


def _scatter(g: np.ndarray, kern: np.ndarray, stride: int, padding: int, size: tuple) -> np.ndarray:
    # adjoint of _correlate w.r.t. its input. g: N×F×H'×W', kern: F×C×k×k -> N×C×H×W
    n, f, ho, wo = g.shape
    c, k = kern.shape[1], kern.shape[2]
    h, w = size
    hp, wp = h + 2 * padding, w + 2 * padding
    dtype = np.result_type(g, kern)
    if stride == 1:
        gflat = _flat_grad(g, hp, wp)
        length = gflat.shape[1]
        buf = np.zeros((c, length + (k - 1) * (wp + 1)), dtype=dtype)
        stacked = np.ascontiguousarray(kern.transpose(2, 3, 1, 0)).reshape(k * k * c, f) @ gflat
        for i in range(k):
            for j in range(k):
                off, row = i * wp + j, (i * k + j) * c
                buf[:, off:off + length] += stacked[row:row + c]
        out = buf[:, :length].reshape(c, n, hp, wp)
    else:
        cols = (kern.reshape(f, -1).T @ g.transpose(1, 0, 2, 3).reshape(f, -1)).reshape(c, k, k, n, ho, wo)
        out = np.zeros((c, n, hp, wp), dtype=dtype)
        hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
        for i in range(k):
            for j in range(k):
                out[:, :, i:i + hs:stride, j:j + ws:stride] += cols[:, i, j]
    return np.ascontiguousarray(out[:, :, padding:padding + h, padding:padding + w].transpose(1, 0, 2, 3))


def _kernel_grad(a: np.ndarray, g: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    # sum over n,h,w of g[n,f,h,w] * windows(a)[n,c,h,w,i,j] -> F×C×k×k
    if stride == 1:
        hp, wp = a.shape[2] + 2 * padding, a.shape[3] + 2 * padding
        flat, length = _flat_padded(a, k, padding)
        gflat = _flat_grad(g, hp, wp)
        out = np.empty((k, k, g.shape[1], a.shape[1]), dtype=np.result_type(a, g))
        for i in range(k):
            for j in range(k):
                off = i * wp + j
                out[i, j] = gflat @ flat[:, off:off + length].T
        return np.ascontiguousarray(out.transpose(2, 3, 0, 1))
    win = _windows(a, k, stride, padding)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))


def _check_conv(x: Tensor, kernels: Tensor, in_axis: int, name: str) -> None:
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"{name}: expected 4-d input and kernels, got {x.shape} and {kernels.shape}")
    if kernels.shape[2] != kernels.shape[3]:
        raise DimensionError(f"{name}: kernels must be square, got {kernels.shape}")
    if x.shape[1] != kernels.shape[in_axis]:
        raise DimensionError(f"{name}: input {x.shape} has {x.shape[1]} channels, kernels {kernels.shape} expect "
                             f"{kernels.shape[in_axis]}")


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of N×C×H×W input with F×C×k×k kernels."""
    _check_conv(x, kernels, 1, "conv2d")
    k = kernels.shape[2]
    conv_output_size(x.shape[2], k, stride, padding)
    conv_output_size(x.shape[3], k, stride, padding)
    out = _correlate(x.data, kernels.data, stride, padding)

    def bw(g):
        return (_scatter(g, kernels.data, stride, padding, x.shape[2:]) if x.requires_grad else None,
                _kernel_grad(x.data, g, k, stride, padding) if kernels.requires_grad else None)

    return _emit(out, (x, kernels), bw, "conv2d")


def deconv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of N×C×H×W input with C×F×k×k kernels.

    This is exactly the adjoint of :func:`conv2d` called with the same kernel
    array (read there as F'=C output maps over C'=F input maps) and the same
    stride and padding.
    """
    _check_conv(x, kernels, 0, "deconv2d")
    k = kernels.shape[2]
    size = (deconv_output_size(x.shape[2], k, stride, padding),
            deconv_output_size(x.shape[3], k, stride, padding))
    out = _scatter(x.data, kernels.data, stride, padding, size)

    def bw(g):
        return (_correlate(g, kernels.data, stride, padding) if x.requires_grad else None,
                _kernel_grad(g, x.data, k, stride, padding) if kernels.requires_grad else None)

    return _emit(out, (x, kernels), bw, "deconv2d")


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BNState:
    """Running per-channel statistics.

    ``running = (1 - momentum) * running + momentum * batch``, so momentum 1.0
    makes the running statistics equal to the last training batch.
    """

    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM

    @classmethod
    def create(cls, channels: int, momentum: float = BN_MOMENTUM) -> "BNState":
        return cls(np.zeros(channels, dtype=np.float64), np.ones(channels, dtype=np.float64), momentum)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, mode: str = "train", state: BNState | None = None,
              update_stats: bool = True, eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization of N×C or N×C×H×W input.

    In ``train`` mode batch statistics are used (and folded into ``state``
    when ``update_stats``); in ``infer`` mode the running statistics are used.
    """
    if x.ndim not in (2, 4):
        raise DimensionError(f"batchnorm expects N×C or N×C×H×W, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm: gamma {gamma.shape} / beta {beta.shape} do not match {c} channels")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    dt = x.data.dtype

    if mode == "train":
        if x.shape[0] < 2:
            raise UsageError("batchnorm in train mode needs a batch of at least 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if state is not None and update_stats:
            m = state.momentum
            state.mean = (1.0 - m) * state.mean + m * mean
            state.var = (1.0 - m) * state.var + m * var
    elif mode == "infer":
        if state is None:
            raise UsageError("batchnorm in infer mode needs running statistics")
        mean, var = state.mean, state.var
    else:
        raise ConfigError(f"unknown batchnorm mode {mode!r}")

    inv_std = (1.0 / np.sqrt(var + eps)).astype(dt).reshape(bshape)
    xhat = (x.data - mean.astype(dt).reshape(bshape)) * inv_std
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    count = x.data.size // c

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        dbeta = g.sum(axis=axes) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(bshape)
            if mode == "train":
                s1 = dxhat.sum(axis=axes).reshape(bshape)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
                dx = inv_std * (dxhat - s1 / count - xhat * s2 / count)
            else:
                dx = dxhat * inv_std
        return dx, dgamma, dbeta

    return _emit(out, (x, gamma, beta), bw, "batchnorm")


# ---------------------------------------------------------------------------
# losses


def bce_loss(score: Tensor, target) -> Tensor:
    """Binary cross-entropy averaged over the batch, scores clamped to [ε, 1-ε]."""
    s = score.data
    t = np.broadcast_to(np.asarray(target, dtype=s.dtype), s.shape)
    lo, hi = SCORE_EPS, 1.0 - SCORE_EPS
    clamped = np.clip(s.astype(np.float64), lo, hi)
    inside = (s > lo) & (s < hi)
    n = s.size
    val = -(t * np.log(clamped) + (1 - t) * np.log1p(-clamped)).mean()

    def bw(g):
        d = -(t / clamped - (1 - t) / (1 - clamped)) / n
        return ((g * d * inside).astype(s.dtype),)

    return _emit(np.asarray(val, dtype=s.dtype), (score,), bw, "bce")


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over all elements."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.data.dtype)
    if t.shape != pred.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {t.shape}")
    diff = pred.data - t
    n = diff.size
    return _emit(np.asarray((diff * diff).mean(), dtype=pred.data.dtype), (pred,),
                 lambda g: (g * 2.0 * diff / n,), "mse")


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-3,
                      tol: float = 1e-3) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f(x)`` with central differences.

    ``x`` is perturbed in place, so ``f`` may close over tensors that share it
    (e.g. a model parameter). The error is the largest coordinate deviation
    divided by the largest gradient magnitude (floored at 1e-8).
    """
    was = x.requires_grad
    saved_grad = x.grad
    x.requires_grad = True
    x.grad = None
    try:
        with Tape() as tape:
            y = f(x)
        if y.data.size != 1:
            raise UsageError(f"finite_diff_check needs a scalar function, got shape {y.shape}")
        backward(y, tape)
        analytic = np.zeros(x.shape) if x.grad is None else x.grad.astype(np.float64)
        numeric = np.zeros(x.shape)
        flat = x.data.reshape(-1)
        with no_record():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = float(f(x).data)
                flat[i] = orig - step
                down = float(f(x).data)
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / (2 * step)
    finally:
        x.requires_grad = was
        x.grad = saved_grad
    scale_ = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    err = float(np.abs(analytic - numeric).max(initial=0.0) / scale_)
    return GradCheckReport(err, tol, analytic, numeric)
