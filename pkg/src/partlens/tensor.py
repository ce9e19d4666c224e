"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine records a computation graph as operations execute and replays it
in reverse topological order to accumulate gradients.  Tensors are immutable
once created (the numpy buffers are marked read-only), so operations are pure
and forward passes over different inputs can run concurrently; the graph for
a single forward/backward pass belongs to one thread.

Conventions baked in here: everything is float64; ReLU and |x| take
subgradient 0 at the kink; the spatial max routes its gradient to the first
maximal element in row-major order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class Tensor:
    """A dense float64 array plus the bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False,
                 _parents: tuple = (), _backward=None):
        arr = np.asarray(values, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        arr = arr.view()
        arr.setflags(write=False)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        # Only grad-requiring parents participate in the backward traversal.
        self._parents = tuple(p for p in _parents if p.requires_grad)
        self._backward = _backward

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------------

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of this value into every reachable leaf.

        Without a seed the tensor must be scalar.  Each node's local backward
        runs exactly once, after all of its consumers.
        """
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar, "
                                 f"got shape {self.shape}")
            seed = np.ones_like(self.data)
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that requires no gradient")
        _accumulate(self, np.asarray(seed, dtype=np.float64).reshape(self.shape))
        for node in reversed(_topological_order(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)


def as_tensor(values) -> Tensor:
    return values if isinstance(values, Tensor) else Tensor(values)


def parameter(values, rng: np.random.Generator | None = None) -> Tensor:
    """A leaf tensor that accumulates gradients."""
    return Tensor(values, requires_grad=True)


def _topological_order(root: Tensor) -> list:
    order: list[Tensor] = []
    seen: set[int] = {id(root)}
    stack: list[list] = [[root, 0]]
    while stack:
        frame = stack[-1]
        node, idx = frame
        if idx < len(node._parents):
            frame[1] += 1
            parent = node._parents[idx]
            if id(parent) not in seen:
                seen.add(id(parent))
                stack.append([parent, 0])
        else:
            stack.pop()
            order.append(node)
    return order


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros(t.data.shape, dtype=np.float64)
    t.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _result(data: np.ndarray, parents: tuple, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


# -- elementwise and broadcast arithmetic -------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _result(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _result(out, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    """a ** exponent for a constant exponent."""
    a = as_tensor(a)
    exponent = float(exponent)
    out = a.data ** exponent

    def backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _result(out, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out)

    return _result(out, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _result(out, (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g / (2.0 * out))

    return _result(out, (a,), backward)


def absolute(a) -> Tensor:
    """|a| with subgradient 0 at 0."""
    a = as_tensor(a)
    out = np.abs(a.data)

    def backward(g):
        _accumulate(a, g * np.sign(a.data))

    return _result(out, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def backward(g):
        _accumulate(a, g * (a.data > 0.0))

    return _result(out, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)

    def backward(g):
        _accumulate(a, g * out * (1.0 - out))

    return _result(out, (a,), backward)


def softplus(a) -> Tensor:
    """log(1 + e^a), computed without overflow; gradient is sigmoid(a)."""
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def backward(g):
        _accumulate(a, g / (1.0 + np.exp(-a.data)))

    return _result(out, (a,), backward)


def clip(a, lower: float, upper: float) -> Tensor:
    """Clamp into [lower, upper]; the gradient passes through unclamped
    entries and is zero on clamped ones."""
    a = as_tensor(a)
    out = np.clip(a.data, lower, upper)

    def backward(g):
        _accumulate(a, g * ((a.data >= lower) & (a.data <= upper)))

    return _result(out, (a,), backward)


def stop_gradient(a) -> Tensor:
    """The same values, detached from the graph."""
    a = as_tensor(a)
    return Tensor(a.data)


# -- reductions, shaping, selection -------------------------------------------

def _normalize_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _result(out, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(g, a.data.shape) / count)

    return _result(out, (a,), backward)


def amax(a, axis, keepdims: bool = False) -> Tensor:
    """Max over the given axes; the gradient goes to the first maximal
    element in row-major order."""
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    moved = np.moveaxis(a.data, axes, range(-len(axes), 0))
    lead = moved.shape[:-len(axes)]
    flat = moved.reshape(lead + (-1,))
    idx = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if keepdims:
        out = np.expand_dims(out, axes)

    def backward(g):
        g = g.reshape(lead)
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gx = np.moveaxis(gflat.reshape(moved.shape), range(-len(axes), 0), axes)
        _accumulate(a, gx)

    return _result(out, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _result(out, (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, np.transpose(g, inverse))

    return _result(out, (a,), backward)


def concatenate(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _result(out, tuple(tensors), backward)


def gather(a, indices: np.ndarray, axis: int) -> Tensor:
    """take_along_axis with constant indices.

    Indices must be unique along the axis within each slice (permutations and
    single picks), so the backward scatter needs no accumulation.
    """
    a = as_tensor(a)
    indices = np.asarray(indices)
    out = np.take_along_axis(a.data, indices, axis=axis)

    def backward(g):
        gx = np.zeros_like(a.data)
        np.put_along_axis(gx, indices, g, axis=axis)
        _accumulate(a, gx)

    return _result(out, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(out, (a, b), backward)


# -- softmax family ------------------------------------------------------------

def softmax(a, axis: int) -> Tensor:
    """Shift-invariant softmax along one axis."""
    a = as_tensor(a)
    axis = axis % a.ndim
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - inner))

    return _result(out, (a,), backward)


def log_softmax(a, axis: int) -> Tensor:
    a = as_tensor(a)
    axis = axis % a.ndim
    shift = stop_gradient(amax(a, axis, keepdims=True))
    z = sub(a, shift)
    return sub(z, log(tsum(exp(z), axis, keepdims=True)))


def normalize(a, axis: int, eps: float = 1e-12) -> Tensor:
    """Unit L2 norm along an axis; vectors with norm below eps map to zero
    with zero gradient."""
    a = as_tensor(a)
    axis = axis % a.ndim
    norms = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    live = norms >= eps
    safe = np.where(live, norms, 1.0)
    out = a.data / safe * live

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, (g - out * inner) / safe * live)

    return _result(out, (a,), backward)


# -- 2-D convolution -------------------------------------------------------------

def _conv_geometry(extent: int, k: int, stride: int, padding: str):
    if padding == "valid":
        if extent < k:
            raise ValueError(f"kernel extent {k} exceeds input extent {extent} "
                             "with valid padding")
        return (extent - k) // stride + 1, 0, 0
    if padding == "same":
        out = -(-extent // stride)
        total = max((out - 1) * stride + k - extent, 0)
        return out, total // 2, total - total // 2
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x, kernel, stride: int = 1, padding: str = "valid") -> Tensor:
    """Cross-correlation of (N,C,H,W) or (C,H,W) input with a (Co,Ci,kh,kw)
    kernel; differentiable in both operands."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects rank-3/4 input and rank-4 kernel, "
                         f"got input {x.shape} and kernel {kernel.shape}")
    n, ci, h, w = xd.shape
    co, ck, kh, kw = kernel.shape
    if ci != ck:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} has {ci} "
                         f"channels but kernel {kernel.shape} expects {ck}")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    oh, pt, pb = _conv_geometry(h, kh, stride, padding)
    ow, pl, pr = _conv_geometry(w, kw, stride, padding)

    xp = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt + pb + pl + pr \
        else xd
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(n, ci, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride), writeable=False)
    cols = view.reshape(n, ci * kh * kw, oh * ow)
    wflat = kernel.data.reshape(co, ci * kh * kw)
    out = np.matmul(wflat, cols).reshape(n, co, oh, ow)

    def backward(g):
        g = g[None] if squeeze else g
        gflat = g.reshape(n, co, oh * ow)
        if kernel.requires_grad:
            gw = np.matmul(gflat, cols.transpose(0, 2, 1)).sum(axis=0)
            _accumulate(kernel, gw.reshape(kernel.data.shape))
        if x.requires_grad:
            gcols = np.matmul(wflat.T, gflat).reshape(n, ci, kh, kw, oh, ow)
            gxp = np.zeros_like(xp)
            for ky in range(kh):
                for kx in range(kw):
                    gxp[:, :, ky:ky + stride * (oh - 1) + 1:stride,
                        kx:kx + stride * (ow - 1) + 1:stride] += gcols[:, :, ky, kx]
            gx = gxp[:, :, pt:pt + h, pl:pl + w]
            _accumulate(x, gx[0] if squeeze else gx)

    return _result(out[0] if squeeze else out, (x, kernel), backward)


# -- batch normalization ----------------------------------------------------------

@dataclass
class BatchNormState:
    """Running statistics for one normalized channel axis."""
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    updates: int = 0

    @classmethod
    def for_channels(cls, channels: int, momentum: float = 0.1) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels), momentum, 0)


def batch_norm(x, gamma, beta, state: BatchNormState, mode: str,
               eps: float = 1e-5, channel_axis: int = 1) -> Tensor:
    """Per-channel batch normalization.

    Train mode normalizes by batch statistics (differentiable through them)
    and updates the running averages; eval mode uses the running averages and
    refuses to run before any training step has populated them.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    channel_axis = channel_axis % x.ndim
    axes = tuple(i for i in range(x.ndim) if i != channel_axis)
    bshape = tuple(x.shape[i] if i == channel_axis else 1 for i in range(x.ndim))
    gammab = reshape(gamma, bshape)
    betab = reshape(beta, bshape)

    if mode == "train":
        mu = tmean(x, axes, keepdims=True)
        centered = sub(x, mu)
        var = tmean(mul(centered, centered), axes, keepdims=True)
        inv = power(add(var, eps), -0.5)
        xn = mul(centered, inv)
        count = x.size // x.shape[channel_axis]
        unbias = count / (count - 1) if count > 1 else 1.0
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean
                              + m * mu.data.reshape(-1))
        state.running_var = ((1 - m) * state.running_var
                             + m * unbias * var.data.reshape(-1))
        state.updates += 1
    else:
        if state.updates == 0:
            raise RuntimeError("batch_norm eval mode before any training step")
        rm = Tensor(state.running_mean.reshape(bshape))
        rinv = Tensor(1.0 / np.sqrt(state.running_var.reshape(bshape) + eps))
        xn = mul(sub(x, rm), rinv)
    return add(mul(xn, gammab), betab)


# -- gradient checking ------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_relative_error: float
    tolerance: float
    passed: bool


def grad_check(fn: Callable[..., Tensor], point, step: float = 1e-5,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients of a scalar function against central
    finite differences, coordinate by coordinate.

    Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator and
    the report passes iff the worst coordinate is within tolerance.
    """
    if step <= 0 or tolerance <= 0:
        raise ValueError("step and tolerance must be positive")
    points = [point] if isinstance(point, Tensor) else list(point)
    inputs = [Tensor(p.data, requires_grad=True) for p in points]
    out = fn(*inputs)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(out.data):
        raise ValueError("grad_check: non-finite function value at the point")
    out.backward()
    analytic = [p.grad if p.grad is not None else np.zeros(p.shape)
                for p in inputs]

    def evaluate(k: int, flat_index: int, delta: float) -> float:
        moved = [t.data if i != k else None for i, t in enumerate(inputs)]
        bumped = inputs[k].data.copy()
        bumped.flat[flat_index] += delta
        moved[k] = bumped
        value = fn(*[Tensor(m) for m in moved]).data
        if not np.isfinite(value):
            raise ValueError("grad_check: non-finite function value near the point")
        return float(value)

    worst = 0.0
    for k, t in enumerate(inputs):
        for j in range(t.size):
            numeric = (evaluate(k, j, step) - evaluate(k, j, -step)) / (2 * step)
            a = float(analytic[k].flat[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return GradCheckReport(worst, tolerance, worst <= tolerance)
