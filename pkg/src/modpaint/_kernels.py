"""Dense numpy kernels for convolution, FFT and resampling.

Pure array-in/array-out functions with no autodiff awareness; the tensor
module wraps each one as a differentiable primitive.  The three conv
functions form an adjoint-closed triple: input_grad and kernel_grad are the
exact transposes of the forward map, built from the same im2col geometry,
so gradients agree with the forward to machine precision rather than to a
discretization tolerance.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """[B,C,H,W] -> [B, C, kh, kw, Ho, Wo] patch view (copied, contiguous)."""
    b, c, h, w = x.shape
    ho = conv_out_size(h, kh, stride, padding)
    wo = conv_out_size(w, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv output would be empty: input {h}x{w}, kernel {kh}x{kw}")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sb, sc, sh, sw = x.strides
    view = as_strided(
        x,
        shape=(b, c, kh, kw, ho, wo),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
    )
    return np.ascontiguousarray(view)


def _col2im(cols: np.ndarray, h: int, w: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back to [B,C,H,W]."""
    b, c, kh, kw, ho, wo = cols.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding : hp - padding, padding : wp - padding]
    return out


def conv2d(x: np.ndarray, k: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Cross-correlation, shared kernel: [B,Ci,H,W],[Co,Ci,kh,kw] -> [B,Co,Ho,Wo]."""
    b = x.shape[0]
    co, ci, kh, kw = k.shape
    cols = _im2col(x, kh, kw, stride, padding)
    _, _, _, _, ho, wo = cols.shape
    cmat = cols.reshape(b, ci * kh * kw, ho * wo)
    kmat = k.reshape(co, ci * kh * kw)
    out = np.matmul(kmat, cmat)
    return out.reshape(b, co, ho, wo)


def conv2d_input_grad(
    g: np.ndarray, k: np.ndarray, stride: int, padding: int, h: int, w: int
) -> np.ndarray:
    """Adjoint of conv2d w.r.t. x: [B,Co,Ho,Wo] -> [B,Ci,H,W]."""
    b, co, ho, wo = g.shape
    _, ci, kh, kw = k.shape
    kmat = k.reshape(co, ci * kh * kw)
    cmat = np.matmul(kmat.T, g.reshape(b, co, ho * wo))
    cols = cmat.reshape(b, ci, kh, kw, ho, wo)
    return _col2im(cols, h, w, stride, padding)


def conv2d_kernel_grad(
    g: np.ndarray, x: np.ndarray, stride: int, padding: int, kh: int, kw: int
) -> np.ndarray:
    """Adjoint of conv2d w.r.t. k: -> [Co,Ci,kh,kw]."""
    b, co, ho, wo = g.shape
    ci = x.shape[1]
    cols = _im2col(x, kh, kw, stride, padding).reshape(b, ci * kh * kw, ho * wo)
    gmat = g.reshape(b, co, ho * wo)
    # per-sample GEMMs then a batch sum; BLAS reads the transposed operand in place
    kmat = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
    return kmat.reshape(co, ci, kh, kw)


def conv2d_batched(x: np.ndarray, k: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Per-sample kernels: [B,Ci,H,W],[B,Co,Ci,kh,kw] -> [B,Co,Ho,Wo]."""
    b, co, ci, kh, kw = k.shape
    cols = _im2col(x, kh, kw, stride, padding)
    _, _, _, _, ho, wo = cols.shape
    cmat = cols.reshape(b, ci * kh * kw, ho * wo)
    kmat = k.reshape(b, co, ci * kh * kw)
    return np.matmul(kmat, cmat).reshape(b, co, ho, wo)


def conv2d_batched_input_grad(
    g: np.ndarray, k: np.ndarray, stride: int, padding: int, h: int, w: int
) -> np.ndarray:
    b, co, ho, wo = g.shape
    _, _, ci, kh, kw = k.shape
    kmat = k.reshape(b, co, ci * kh * kw)
    cmat = np.matmul(kmat.transpose(0, 2, 1), g.reshape(b, co, ho * wo))
    return _col2im(cmat.reshape(b, ci, kh, kw, ho, wo), h, w, stride, padding)


def conv2d_batched_kernel_grad(
    g: np.ndarray, x: np.ndarray, stride: int, padding: int, kh: int, kw: int
) -> np.ndarray:
    b, co, ho, wo = g.shape
    ci = x.shape[1]
    cols = _im2col(x, kh, kw, stride, padding).reshape(b, ci * kh * kw, ho * wo)
    kmat = np.matmul(g.reshape(b, co, ho * wo), cols.transpose(0, 2, 1))
    return kmat.reshape(b, co, ci, kh, kw)


def rfft2_stacked(x: np.ndarray) -> np.ndarray:
    """Unnormalized real 2-D FFT, real/imag stacked: [B,C,H,W] -> [B,2C,H,W//2+1]."""
    spec = np.fft.rfft2(x, axes=(2, 3))
    return np.concatenate([spec.real, spec.imag], axis=1).astype(x.dtype, copy=False)


def rfft2_stacked_adjoint(g: np.ndarray, w: int) -> np.ndarray:
    """Exact adjoint of rfft2_stacked: [B,2C,H,Wh] -> [B,C,H,W].

    <g, F(x)> = <F^T(g), x> with the half-spectrum embedded at columns
    [0, Wh) of a full spectrum of zeros; F^T(g) = H*W * Re(ifft2(G)).
    """
    b, c2, h, wh = g.shape
    c = c2 // 2
    cdtype = np.complex64 if g.dtype == np.float32 else np.complex128
    spec = np.zeros((b, c, h, w), dtype=cdtype)
    spec[:, :, :, :wh] = g[:, :c] + 1j * g[:, c:]
    out = np.fft.ifft2(spec, axes=(2, 3)).real * (h * w)
    return out.astype(g.dtype, copy=False)


def half_spectrum_weights(w: int) -> np.ndarray:
    """Column weights d (shape [w//2+1]) making (1/HW) F^T(d*X) the inverse of F.

    Interior columns represent two conjugate bins of the full spectrum, so
    they carry weight 2; columns 0 and w/2 are self-conjugate with weight 1.
    """
    wh = w // 2 + 1
    d = np.full(wh, 2.0)
    d[0] = 1.0
    if w % 2 == 0:
        d[-1] = 1.0
    return d


def upsample_nearest2x(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def block_sum2x(g: np.ndarray) -> np.ndarray:
    """Adjoint of upsample_nearest2x: sum each 2x2 block."""
    b, c, h, w = g.shape
    return g.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
