"""Style- and spatially-modulated convolutions and the decoder blocks.

Two modulation mechanisms share one core idea (scale, convolve, then
demodulate so per-channel output variance stays near one):

* mod_conv2d scales kernel input-channels by a per-sample style vector;
  demodulation divides each output channel by the modulated kernel's norm.
* spatial modulation scales the feature map by a full spatial tensor A,
  convolves, and demodulates with the spatial mean of A^2 standing in for
  the per-position scale.  A and the shift map B come from a small affine
  parameter network over the parallel global-branch feature X; a scalar
  per-channel style term is added to A so the global code still steers it.

The demodulation epsilon 1e-8 sits inside the inverse square root.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .layers import Conv2dLayer, FcLayer, Module, unit_weight
from .prng import Prng
from .tensor import (
    Tensor,
    add,
    add_channel_bias,
    add_scalar,
    broadcast_to,
    conv2d,
    conv2d_batched,
    leaky_relu,
    matmul,
    mean_axes,
    mul,
    mul_scalar,
    reshape,
    rsqrt,
    scale_channels,
    square,
    sum_axes,
    transpose,
    upsample_nearest2x,
)


def mod_conv2d(
    x: Tensor,
    kernel: Tensor,
    style: Tensor,
    demodulate: bool = True,
    eps: float = 1e-8,
    stride: int = 1,
    padding: Optional[int] = None,
) -> Tensor:
    """Style-modulated convolution with per-sample kernels.

    x [B,Ci,H,W], kernel [Co,Ci,kh,kw], style [B,Ci].  The kernel's input
    channels are scaled by the style; with demodulate=True each output
    channel is divided by the modulated kernel's l2 norm (+eps).
    """
    if kernel.ndim != 4:
        raise ValueError(f"mod_conv2d: kernel must be [Co,Ci,kh,kw], got {kernel.shape}")
    if style.ndim != 2 or style.shape[1] != kernel.shape[1]:
        raise ValueError(
            f"mod_conv2d: style must be [B,{kernel.shape[1]}], got {style.shape}"
        )
    if style.shape[0] != x.shape[0]:
        raise ValueError(f"mod_conv2d: batch mismatch {x.shape[0]} vs {style.shape[0]}")
    b = x.shape[0]
    co, ci, kh, kw = kernel.shape
    if padding is None:
        padding = kh // 2
    kshape = (b, co, ci, kh, kw)
    kb = mul(
        broadcast_to(reshape(kernel, (1, co, ci, kh, kw)), kshape),
        broadcast_to(reshape(style, (b, 1, ci, 1, 1)), kshape),
    )
    if demodulate:
        sumsq = sum_axes(square(kb), (2, 3, 4), keepdims=True)  # [B,Co,1,1,1]
        kb = mul(kb, broadcast_to(rsqrt(add_scalar(sumsq, eps)), kshape))
    return conv2d_batched(x, kb, stride, padding)


def modulate_conv_demod(y: Tensor, a: Tensor, kernel: Tensor, eps: float = 1e-8) -> Tensor:
    """Spatial core: scale by A, 3x3 conv, demodulate per output channel.

    D[b,o] = (sum_i sum_k kernel[o,i,k]^2 * mean_hw A[b,i]^2 + eps)^(-1/2);
    the mean over positions makes D a per-channel scalar even though A
    varies spatially.
    """
    if y.shape != a.shape:
        raise ValueError(f"modulate_conv_demod: Y {y.shape} vs A {a.shape}")
    ybar = mul(y, a)
    yhat = conv2d(ybar, kernel, 1, kernel.shape[2] // 2)
    k2 = sum_axes(square(kernel), (2, 3))          # [Co,Ci]
    a2 = mean_axes(square(a), (2, 3))              # [B,Ci]
    denom = matmul(a2, transpose(k2, (1, 0)))      # [B,Co]
    d = rsqrt(add_scalar(denom, eps))
    return scale_channels(yhat, d)


class AffineParamNet(Module):
    """Predicts the spatial scale A0 and shift B from the global-branch map X.

    trunk: 1x1 reduce, then a 3x3 and a 1x1 conv summed; two 1x1 heads.
    Heads start at zero so modulation begins as the identity.
    """

    def __init__(self, cin: int, cout: int, rng: Prng):
        hidden = cout
        self.reduce = Conv2dLayer(cin, hidden, 1, rng.substream("reduce"))
        self.trunk3 = Conv2dLayer(hidden, hidden, 3, rng.substream("trunk3"))
        self.trunk1 = Conv2dLayer(hidden, hidden, 1, rng.substream("trunk1"))
        self.head_scale = Conv2dLayer(hidden, cout, 1, rng.substream("hs"), zero_weight=True)
        self.head_shift = Conv2dLayer(hidden, cout, 1, rng.substream("hb"), zero_weight=True)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        t1 = self.reduce(x)
        t2 = add(self.trunk3(t1), self.trunk1(t1))
        return self.head_scale(t2), self.head_shift(t2)


def spatial_modulation(
    y: Tensor,
    x: Tensor,
    g: Tensor,
    kernel: Tensor,
    noise: Optional[Tensor],
    apn: AffineParamNet,
    alpha_fc: FcLayer,
    noise_amp: Optional[Tensor] = None,
    eps: float = 1e-8,
) -> Tensor:
    """Full spatial modulation: A = A0(X) + alpha(g); out = demod(conv(Y*A)) + B + n."""
    a0, bmap = apn(x)
    alpha = alpha_fc(g)  # [B,C]
    b, c = alpha.shape
    a = add(a0, broadcast_to(reshape(alpha, (b, c, 1, 1)), a0.shape))
    out = add(modulate_conv_demod(y, a, kernel, eps), bmap)
    if noise is not None:
        n = broadcast_to(noise, (b, c, y.shape[2], y.shape[3]))
        if noise_amp is not None:
            n = mul(n, broadcast_to(reshape(noise_amp, (1, c, 1, 1)), n.shape))
        out = add(out, n)
    return out


class ModulatedConvLayer(Module):
    """mod_conv2d with a learned style affine from the global code, bias, leaky."""

    def __init__(
        self,
        cin: int,
        cout: int,
        k: int,
        g_dim: int,
        rng: Prng,
        demodulate: bool = True,
        activate: bool = True,
    ):
        self.demodulate = demodulate
        self.activate = activate
        self.kscale = 1.0 / math.sqrt(cin * k * k)
        self.kernel = unit_weight(rng.substream("kernel"), (cout, cin, k, k))
        # style starts at exactly 1 so initial forward matches a plain conv
        self.affine = FcLayer(g_dim, cin, rng.substream("affine"), zero_weight=True, bias_init=1.0)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)

    def __call__(self, x: Tensor, g: Tensor) -> Tensor:
        out = mod_conv2d(x, mul_scalar(self.kernel, self.kscale), self.affine(g),
                         demodulate=self.demodulate)
        out = add_channel_bias(out, self.bias)
        return leaky_relu(out, 0.2) if self.activate else out


class GlobalBlock(Module):
    """Decoder global branch: upsample, two modulated convs; X taps the midpoint.

    The last stage drops the second conv: nothing consumes its F_g output,
    so carrying the conv would leave parameters no gradient reaches.
    """

    def __init__(self, cin: int, cout: int, g_dim: int, rng: Prng, last: bool = False):
        self.conv_up = ModulatedConvLayer(cin, cout, 3, g_dim, rng.substream("up"))
        self.conv = None if last else ModulatedConvLayer(cout, cout, 3, g_dim, rng.substream("conv"))

    def __call__(self, f_g: Tensor, g: Tensor) -> tuple[Tensor, Optional[Tensor]]:
        x = self.conv_up(upsample_nearest2x(f_g), g)
        return x, None if self.conv is None else self.conv(x, g)


class SpatialBlock(Module):
    """Decoder spatial branch: upsample+modconv to Y, then spatial modulation by X."""

    def __init__(self, cin: int, cout: int, g_dim: int, rng: Prng):
        self.conv_up = ModulatedConvLayer(cin, cout, 3, g_dim, rng.substream("up"))
        self.apn = AffineParamNet(cout, cout, rng.substream("apn"))
        self.alpha_fc = FcLayer(g_dim, cout, rng.substream("alpha"), zero_weight=True, bias_init=1.0)
        self.kscale = 1.0 / math.sqrt(cout * 9)
        self.kernel = unit_weight(rng.substream("kernel"), (cout, cout, 3, 3))
        self.noise_amp = Tensor(np.zeros(cout), requires_grad=True)

    def __call__(self, f_s: Tensor, x: Tensor, g: Tensor, noise: Optional[Tensor]) -> Tensor:
        y = self.conv_up(upsample_nearest2x(f_s), g)
        return spatial_modulation(
            y, x, g, mul_scalar(self.kernel, self.kscale), noise,
            self.apn, self.alpha_fc, self.noise_amp
        )


class CascadeStage(Module):
    """One decoder scale: global block feeds its midpoint X into the spatial block."""

    def __init__(self, cin: int, cout: int, g_dim: int, rng: Prng, last: bool = False):
        self.gb = GlobalBlock(cin, cout, g_dim, rng.substream("gb"), last=last)
        self.sb = SpatialBlock(cin, cout, g_dim, rng.substream("sb"))

    def __call__(
        self, f_g: Tensor, f_s: Tensor, g: Tensor, noise: Optional[Tensor]
    ) -> tuple[Tensor, Tensor, Tensor]:
        x, f_g_out = self.gb(f_g, g)
        f_s_out = self.sb(f_s, x, g, noise)
        return x, f_g_out, f_s_out
