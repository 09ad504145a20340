"""Minimal dense tensors with tape-based reverse-mode differentiation.

Design notes, load-bearing:

* Tensors are immutable; every op returns a fresh tensor.  Parameter
  updates happen by rebinding names, never in place.
* A gradient pass is itself built from recorded primitives.  Each VJP
  closure calls ordinary ops, so when ``grad(..., create_graph=True)``
  runs, the backward computation lands on the active tape and can be
  differentiated again (reverse-on-reverse).  This is what makes the
  gradient-penalty double backward exact rather than approximated.
* For that to terminate, the primitive set must be closed under
  differentiation.  Convolution ships as an adjoint triple (forward,
  input-grad, kernel-grad) whose VJPs only reference members of the
  triple; the FFT ships as a forward/adjoint pair.
* Precision is a process-global mode (float64 default).  Switch it only
  between runs: tensors created under different modes do not mix.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    pass


class AutodiffError(RuntimeError):
    pass


_DTYPE = np.float64


def current_dtype():
    return _DTYPE


@contextmanager
def precision(mode: str):
    """Set the process-global float width: "float32" or "float64"."""
    global _DTYPE
    if mode not in ("float32", "float64"):
        raise ValueError(f"unknown precision mode {mode!r}")
    prev = _DTYPE
    _DTYPE = np.float32 if mode == "float32" else np.float64
    try:
        yield
    finally:
        _DTYPE = prev


def set_precision(mode: str) -> None:
    global _DTYPE
    if mode not in ("float32", "float64"):
        raise ValueError(f"unknown precision mode {mode!r}")
    _DTYPE = np.float32 if mode == "float32" else np.float64


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=_DTYPE)
        if arr.size == 0:
            raise ShapeError("zero-size tensors are not supported")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional["Tensor"] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return _wrap(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def _wrap(arr: np.ndarray) -> Tensor:
    """Internal constructor: trusts the array, no copy, no cast."""
    t = Tensor.__new__(Tensor)
    if arr.size == 0:
        raise ShapeError("zero-size tensors are not supported")
    arr.setflags(write=False)
    t.data = arr
    t.requires_grad = False
    t.grad = None
    return t


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def full(shape, value: float, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(shape, value), requires_grad=requires_grad)


# --- tape -------------------------------------------------------------

class _Node:
    __slots__ = ("inputs", "output", "vjp")

    def __init__(self, inputs, output, vjp):
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    def __init__(self):
        self.nodes: list[_Node] = []


_tape_stack: list[Tape] = []
_recording = True


@contextmanager
def tape():
    t = Tape()
    _tape_stack.append(t)
    try:
        yield t
    finally:
        _tape_stack.pop()


@contextmanager
def no_record():
    """Run ops without recording them (constants w.r.t. differentiation)."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


def _record(inputs: tuple, output: Tensor, vjp: Callable) -> None:
    if _tape_stack and _recording:
        _tape_stack[-1].nodes.append(_Node(inputs, output, vjp))


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    create_graph: bool = False,
    allow_unused: bool = False,
) -> list[Tensor]:
    """Gradients of a scalar output w.r.t. each input, via the active tape.

    With create_graph=True the backward pass is recorded too, so the
    returned gradients can be differentiated by a later grad() call on
    the same tape.
    """
    if not _tape_stack:
        raise AutodiffError("grad() requires an active tape()")
    if output.data.size != 1:
        raise AutodiffError(f"grad() output must be scalar, got shape {output.shape}")
    t = _tape_stack[-1]
    snapshot = list(t.nodes)
    grads: dict[int, Tensor] = {id(output): _wrap(np.ones_like(output.data))}

    ctx = tape_passthrough() if create_graph else no_record()
    with ctx:
        for node in reversed(snapshot):
            g_out = grads.get(id(node.output))
            if g_out is None:
                continue
            partials = node.vjp(g_out)
            for inp, g_in in zip(node.inputs, partials):
                if g_in is None:
                    continue
                acc = grads.get(id(inp))
                grads[id(inp)] = g_in if acc is None else add(acc, g_in)

    result = []
    for x in inputs:
        g = grads.get(id(x))
        if g is None:
            if not allow_unused:
                raise AutodiffError(
                    "no gradient path from output to an input; "
                    "was it used inside the active tape?"
                )
            g = _wrap(np.zeros_like(x.data))
        result.append(g)
    return result


@contextmanager
def tape_passthrough():
    yield


def backward(output: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from output."""
    if not _tape_stack:
        raise AutodiffError("backward() requires an active tape()")
    if output.data.size != 1:
        raise AutodiffError(f"backward() output must be scalar, got shape {output.shape}")
    t = _tape_stack[-1]
    snapshot = list(t.nodes)
    grads: dict[int, Tensor] = {id(output): _wrap(np.ones_like(output.data))}
    tensors: dict[int, Tensor] = {id(output): output}
    with no_record():
        for node in reversed(snapshot):
            g_out = grads.get(id(node.output))
            if g_out is None:
                continue
            for inp, g_in in zip(node.inputs, node.vjp(g_out)):
                if g_in is None:
                    continue
                acc = grads.get(id(inp))
                grads[id(inp)] = g_in if acc is None else add(acc, g_in)
                tensors[id(inp)] = inp
    for key, t_obj in tensors.items():
        if t_obj.requires_grad:
            t_obj.grad = grads[key]


# --- primitive ops ----------------------------------------------------

def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = _wrap(a.data + b.data)
    _record((a, b), out, lambda g: (g, g))
    return out


def neg(a: Tensor) -> Tensor:
    out = _wrap(-a.data)
    _record((a,), out, lambda g: (neg(g),))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = _wrap(a.data * b.data)
    _record((a, b), out, lambda g: (mul(g, b), mul(g, a)))
    return out


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = _wrap(a.data + c)
    _record((a,), out, lambda g: (g,))
    return out


def mul_scalar(a: Tensor, c: float) -> Tensor:
    out = _wrap(a.data * c)
    _record((a,), out, lambda g: (mul_scalar(g, c),))
    return out


def reciprocal(a: Tensor) -> Tensor:
    out = _wrap(1.0 / a.data)
    def vjp(g):
        return (neg(mul(g, mul(out, out))),)
    _record((a,), out, vjp)
    return out


def sqrt(a: Tensor) -> Tensor:
    out = _wrap(np.sqrt(a.data))
    def vjp(g):
        return (mul_scalar(mul(g, reciprocal(out)), 0.5),)
    _record((a,), out, vjp)
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)
    out = _wrap(np.where(a.data > 0, a.data, a.data * slope))
    fac_t = _wrap(factor)
    _record((a,), out, lambda g: (mul(g, fac_t),))
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_arr = np.empty_like(x)
    pos = x >= 0
    out_arr[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_arr[~pos] = ex / (1.0 + ex)
    out = _wrap(out_arr)
    def vjp(g):
        return (mul(g, mul(out, add_scalar(neg(out), 1.0))),)
    _record((a,), out, vjp)
    return out


def softplus(a: Tensor) -> Tensor:
    out = _wrap(np.logaddexp(0.0, a.data).astype(a.data.dtype, copy=False))
    def vjp(g):
        return (mul(g, sigmoid(a)),)
    _record((a,), out, vjp)
    return out


def tanh(a: Tensor) -> Tensor:
    out = _wrap(np.tanh(a.data))
    def vjp(g):
        return (mul(g, add_scalar(neg(mul(out, out)), 1.0)),)
    _record((a,), out, vjp)
    return out


def sum_axes(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))
    axes = tuple(ax % a.ndim for ax in axes)
    out = _wrap(a.data.sum(axis=axes, keepdims=keepdims))
    in_shape = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(in_shape))
    def vjp(g):
        gk = g if keepdims else reshape(g, kept)
        return (broadcast_to(gk, in_shape),)
    _record((a,), out, vjp)
    return out


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if a.ndim != len(shape):
        raise ShapeError(f"broadcast_to: rank mismatch {a.shape} -> {shape} (reshape first)")
    for s_in, s_out in zip(a.shape, shape):
        if s_in != s_out and s_in != 1:
            raise ShapeError(f"broadcast_to: cannot expand {a.shape} to {shape}")
    if a.shape == shape:
        return a
    out = _wrap(np.ascontiguousarray(np.broadcast_to(a.data, shape)))
    axes = tuple(i for i, (s_in, s_out) in enumerate(zip(a.shape, shape)) if s_in == 1 and s_out > 1)
    def vjp(g):
        return (sum_axes(g, axes, keepdims=True),)
    _record((a,), out, vjp)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = _wrap(np.ascontiguousarray(a.data).reshape(shape))
    in_shape = a.shape
    _record((a,), out, lambda g: (reshape(g, in_shape),))
    return out


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = _wrap(np.ascontiguousarray(a.data.transpose(axes)))
    inv = tuple(np.argsort(axes))
    _record((a,), out, lambda g: (transpose(g, inv),))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = _wrap(a.data @ b.data)
    def vjp(g):
        return (matmul(g, transpose(b, (1, 0))), matmul(transpose(a, (1, 0)), g))
    _record((a, b), out, vjp)
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    axis = axis % tensors[0].ndim
    out = _wrap(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    def vjp(g):
        return tuple(narrow(g, axis, int(offsets[i]), sizes[i]) for i in range(len(tensors)))
    _record(tensors, out, vjp)
    return out


def narrow(a: Tensor, axis: int, start: int, size: int) -> Tensor:
    axis = axis % a.ndim
    if start < 0 or start + size > a.shape[axis]:
        raise ShapeError(f"narrow: [{start}, {start + size}) out of range for axis {axis} of {a.shape}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + size)
    out = _wrap(np.ascontiguousarray(a.data[tuple(idx)]))
    after = a.shape[axis] - start - size
    def vjp(g):
        return (pad_axis(g, axis, start, after),)
    _record((a,), out, vjp)
    return out


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    axis = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    out = _wrap(np.pad(a.data, widths))
    size = a.shape[axis]
    def vjp(g):
        return (narrow(g, axis, before, size),)
    _record((a,), out, vjp)
    return out


# --- convolution: adjoint-closed triples ------------------------------

def _check_conv_shapes(x: Tensor, k: Tensor, batched: bool) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be [B,C,H,W], got {x.shape}")
    if batched:
        if k.ndim != 5:
            raise ShapeError(f"conv2d_batched: kernel must be [B,Co,Ci,kh,kw], got {k.shape}")
        if k.shape[0] != x.shape[0]:
            raise ShapeError(f"conv2d_batched: batch mismatch {x.shape[0]} vs {k.shape[0]}")
        ci = k.shape[2]
    else:
        if k.ndim != 4:
            raise ShapeError(f"conv2d: kernel must be [Co,Ci,kh,kw], got {k.shape}")
        ci = k.shape[1]
    if ci != x.shape[1]:
        raise ShapeError(f"conv2d: channel mismatch input {x.shape[1]} vs kernel {ci}")


def conv2d(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    _check_conv_shapes(x, k, batched=False)
    out = _wrap(_kernels.conv2d(x.data, k.data, stride, padding))
    h, w = x.shape[2], x.shape[3]
    kh, kw = k.shape[2], k.shape[3]
    def vjp(g):
        return (
            conv2d_input_grad(g, k, stride, padding, h, w),
            conv2d_kernel_grad(g, x, stride, padding, kh, kw),
        )
    _record((x, k), out, vjp)
    return out


def conv2d_input_grad(g: Tensor, k: Tensor, stride: int, padding: int, h: int, w: int) -> Tensor:
    out = _wrap(_kernels.conv2d_input_grad(g.data, k.data, stride, padding, h, w))
    kh, kw = k.shape[2], k.shape[3]
    def vjp(v):
        return (
            conv2d(v, k, stride, padding),
            conv2d_kernel_grad(g, v, stride, padding, kh, kw),
        )
    _record((g, k), out, vjp)
    return out


def conv2d_kernel_grad(g: Tensor, x: Tensor, stride: int, padding: int, kh: int, kw: int) -> Tensor:
    out = _wrap(_kernels.conv2d_kernel_grad(g.data, x.data, stride, padding, kh, kw))
    h, w = x.shape[2], x.shape[3]
    def vjp(u):
        return (
            conv2d(x, u, stride, padding),
            conv2d_input_grad(g, u, stride, padding, h, w),
        )
    _record((g, x), out, vjp)
    return out


def conv2d_batched(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    _check_conv_shapes(x, k, batched=True)
    out = _wrap(_kernels.conv2d_batched(x.data, k.data, stride, padding))
    h, w = x.shape[2], x.shape[3]
    kh, kw = k.shape[3], k.shape[4]
    def vjp(g):
        return (
            conv2d_batched_input_grad(g, k, stride, padding, h, w),
            conv2d_batched_kernel_grad(g, x, stride, padding, kh, kw),
        )
    _record((x, k), out, vjp)
    return out


def conv2d_batched_input_grad(g: Tensor, k: Tensor, stride: int, padding: int, h: int, w: int) -> Tensor:
    out = _wrap(_kernels.conv2d_batched_input_grad(g.data, k.data, stride, padding, h, w))
    kh, kw = k.shape[3], k.shape[4]
    def vjp(v):
        return (
            conv2d_batched(v, k, stride, padding),
            conv2d_batched_kernel_grad(g, v, stride, padding, kh, kw),
        )
    _record((g, k), out, vjp)
    return out


def conv2d_batched_kernel_grad(g: Tensor, x: Tensor, stride: int, padding: int, kh: int, kw: int) -> Tensor:
    out = _wrap(_kernels.conv2d_batched_kernel_grad(g.data, x.data, stride, padding, kh, kw))
    h, w = x.shape[2], x.shape[3]
    def vjp(u):
        return (
            conv2d_batched(x, u, stride, padding),
            conv2d_batched_input_grad(g, u, stride, padding, h, w),
        )
    _record((g, x), out, vjp)
    return out


# --- FFT: adjoint-closed pair -----------------------------------------

def _check_pow2(n: int, what: str) -> None:
    if n < 2 or (n & (n - 1)) != 0:
        raise ShapeError(f"{what} must be a power of two >= 2, got {n}")


def rfft2(x: Tensor) -> Tensor:
    """Real 2-D FFT (unnormalized), real/imag stacked along channels.

    [B,C,H,W] -> [B,2C,H,W//2+1]; a constant c maps to a DC bin of c*H*W.
    """
    if x.ndim != 4:
        raise ShapeError(f"rfft2: input must be [B,C,H,W], got {x.shape}")
    _check_pow2(x.shape[2], "rfft2 height")
    _check_pow2(x.shape[3], "rfft2 width")
    out = _wrap(_kernels.rfft2_stacked(x.data))
    w = x.shape[3]
    _record((x,), out, lambda g: (rfft2_adjoint(g, w),))
    return out


def rfft2_adjoint(g: Tensor, w: int) -> Tensor:
    """Exact adjoint of rfft2: [B,2C,H,W//2+1] -> [B,C,H,W]."""
    out = _wrap(_kernels.rfft2_stacked_adjoint(g.data, w))
    _record((g,), out, lambda v: (rfft2(v),))
    return out


def irfft2(xs: Tensor, w: int) -> Tensor:
    """Inverse of rfft2 for Hermitian-consistent stacked spectra.

    Composite: (1/(H*W)) * F^T(d * X) where d doubles the interior
    columns that stand for two conjugate bins of the full spectrum.
    """
    if xs.ndim != 4:
        raise ShapeError(f"irfft2: input must be [B,2C,H,Wh], got {xs.shape}")
    h = xs.shape[2]
    wh = xs.shape[3]
    if wh != w // 2 + 1:
        raise ShapeError(f"irfft2: expected {w // 2 + 1} columns for width {w}, got {wh}")
    d = _kernels.half_spectrum_weights(w).astype(xs.data.dtype)
    d_t = _wrap(np.ascontiguousarray(np.broadcast_to(d.reshape(1, 1, 1, wh), xs.shape)))
    scaled = mul(xs, d_t)
    return mul_scalar(rfft2_adjoint(scaled, w), 1.0 / (h * w))


# --- resampling: adjoint-closed pair ----------------------------------

def upsample_nearest2x(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest2x: input must be [B,C,H,W], got {x.shape}")
    out = _wrap(_kernels.upsample_nearest2x(x.data))
    _record((x,), out, lambda g: (block_sum2x(g),))
    return out


def block_sum2x(g: Tensor) -> Tensor:
    if g.ndim != 4 or g.shape[2] % 2 or g.shape[3] % 2:
        raise ShapeError(f"block_sum2x: input must be [B,C,2h,2w], got {g.shape}")
    out = _wrap(_kernels.block_sum2x(g.data))
    _record((g,), out, lambda v: (upsample_nearest2x(v),))
    return out


# --- composites -------------------------------------------------------

def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))

def div(a: Tensor, b: Tensor) -> Tensor:
    return mul(a, reciprocal(b))

def rsqrt(a: Tensor) -> Tensor:
    return reciprocal(sqrt(a))

def square(a: Tensor) -> Tensor:
    return mul(a, a)

def sum_all(a: Tensor) -> Tensor:
    return sum_axes(a, None, keepdims=False)

def mean_axes(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    if axes is None:
        n = a.size
    else:
        n = int(np.prod([a.shape[ax % a.ndim] for ax in axes]))
    return mul_scalar(sum_axes(a, axes, keepdims=keepdims), 1.0 / n)

def mean_all(a: Tensor) -> Tensor:
    return mean_axes(a, None)

def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    sq = sum_axes(square(a), (axis,), keepdims=True)
    inv = rsqrt(add_scalar(sq, eps))
    return mul(a, broadcast_to(inv, a.shape))

def fc(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Fully connected: [B,din] @ [din,dout] (+ bias [dout])."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, broadcast_to(reshape(b, (1, -1)), out.shape))
    return out

def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """x [B,C,H,W] + b [C] broadcast over batch and space.

    Fused primitive: the broadcast never materializes, which matters on
    every conv bias in the hot path.
    """
    if b.ndim != 1 or x.ndim != 4 or b.shape[0] != x.shape[1]:
        raise ShapeError(f"add_channel_bias: {x.shape} + {b.shape}")
    out = _wrap(x.data + b.data[None, :, None, None])
    _record((x, b), out, lambda g: (g, sum_axes(g, (0, 2, 3))))
    return out

def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """x [B,C,H,W] * s [B,C] broadcast over space (fused primitive)."""
    if s.ndim != 2 or x.ndim != 4 or s.shape != x.shape[:2]:
        raise ShapeError(f"scale_channels: {x.shape} * {s.shape}")
    out = _wrap(x.data * s.data[:, :, None, None])
    def vjp(g):
        return (scale_channels(g, s), sum_axes(mul(g, x), (2, 3)))
    _record((x, s), out, vjp)
    return out

def pixel_norm(z: Tensor, eps: float = 1e-8) -> Tensor:
    ms = mean_axes(square(z), (1,), keepdims=True)
    return mul(z, broadcast_to(rsqrt(add_scalar(ms, eps)), z.shape))


# --- finite differences -----------------------------------------------

def finite_difference_grad(f: Callable, xs: list[np.ndarray], index: int, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f(0-th order) w.r.t. xs[index], float64."""
    base = [np.asarray(x, dtype=np.float64).copy() for x in xs]
    target = base[index]
    g = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(*base))
        flat[i] = orig - step
        fm = float(f(*base))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def check_gradients(f: Callable, xs: list[np.ndarray], step: float = 1e-5) -> float:
    """Max relative error of tape gradients vs central differences (float64).

    f maps Tensors to a scalar Tensor.  The error is scaled by the largest
    finite-difference entry, floored at 1e-3 so near-zero gradients are
    compared absolutely.
    """
    with precision("float64"):
        ts = [Tensor(x, requires_grad=True) for x in xs]
        with tape():
            out = f(*ts)
            gs = grad(out, ts)
        def f_np(*arrs):
            with no_record():
                return f(*[_wrap(np.asarray(a, dtype=np.float64))
                           for a in arrs]).item()
        worst = 0.0
        for i in range(len(xs)):
            fd = finite_difference_grad(f_np, [t.data for t in ts], i, step)
            scale = max(float(np.abs(fd).max()), 1e-3)
            err = float(np.abs(gs[i].data - fd).max()) / scale
            worst = max(worst, err)
    return worst
