"""Fast-Fourier-convolution blocks and the two-branch encoder.

Each block keeps a local branch (ordinary 3x3 convs, receptive field grows
slowly) and a global branch whose spectral transform touches every pixel in
one step: a 1x1 conv, a real FFT with real/imag stacked as channels, a 1x1
conv across those channels, the inverse FFT, and a closing 1x1 conv.
Because the frequency-domain conv shares weights across bins it cannot
express an arbitrary transfer function; tests that need one (convolution
theorem) inject a custom frequency-processing function instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .layers import Conv2dLayer, FcLayer, Module
from .prng import Prng
from .tensor import (
    Tensor,
    add,
    concat,
    irfft2,
    l2_normalize,
    leaky_relu,
    narrow,
    reshape,
    rfft2,
)


class SpectralTransform(Module):
    """Global-receptive-field branch: conv, FFT, conv over spectrum, inverse FFT, conv.

    activation=False makes the whole map linear (verification configs).
    freq_fn, when given, replaces the frequency-domain conv + activation.
    """

    def __init__(
        self,
        cin: int,
        cout: int,
        rng: Prng,
        stride: int = 1,
        activation: bool = True,
    ):
        self.pre = Conv2dLayer(cin, cout, 1, rng.substream("pre"), stride=stride)
        self.freq = Conv2dLayer(2 * cout, 2 * cout, 1, rng.substream("freq"))
        self.post = Conv2dLayer(cout, cout, 1, rng.substream("post"))
        self.activation = activation

    def __call__(self, x: Tensor, freq_fn: Optional[Callable[[Tensor], Tensor]] = None) -> Tensor:
        h = self.pre(x)
        w = h.shape[3]
        spec = rfft2(h)
        if freq_fn is not None:
            spec = freq_fn(spec)
        else:
            spec = self.freq(spec)
            if self.activation:
                spec = leaky_relu(spec, 0.2)
        out = irfft2(spec, w)
        return self.post(out)


class FfcBlock(Module):
    """Two-branch block: local<->global cross talk, spectral global path.

    y_local  = leaky(l2l(x_l) + g2l(x_g))
    y_global = leaky(l2g(x_l) + spectral(x_g))
    A block with cin_global=0 (network stem) drops the global-input paths.
    """

    def __init__(
        self,
        cin_local: int,
        cin_global: int,
        cout_local: int,
        cout_global: int,
        rng: Prng,
        stride: int = 1,
    ):
        self.cin_global = cin_global
        self.l2l = Conv2dLayer(cin_local, cout_local, 3, rng.substream("l2l"), stride=stride)
        self.l2g = Conv2dLayer(cin_local, cout_global, 3, rng.substream("l2g"), stride=stride)
        if cin_global > 0:
            self.g2l = Conv2dLayer(cin_global, cout_local, 3, rng.substream("g2l"), stride=stride)
            self.spectral = SpectralTransform(cin_global, cout_global, rng.substream("spectral"), stride=stride)

    def __call__(self, x_local: Tensor, x_global: Optional[Tensor]) -> tuple[Tensor, Tensor]:
        y_l = self.l2l(x_local)
        y_g = self.l2g(x_local)
        if self.cin_global > 0:
            if x_global is None:
                raise ValueError("block was built with a global input branch")
            y_l = add(y_l, self.g2l(x_global))
            y_g = add(y_g, self.spectral(x_global))
        return leaky_relu(y_l, 0.2), leaky_relu(y_g, 0.2)


class EncoderStage(Module):
    """Stride-2 FFC block plus a 1x1 strided shortcut over the concatenated branches."""

    def __init__(self, cin_l: int, cin_g: int, cout_l: int, cout_g: int, rng: Prng):
        self.cout_l = cout_l
        self.ffc = FfcBlock(cin_l, cin_g, cout_l, cout_g, rng.substream("ffc"), stride=2)
        self.skip = Conv2dLayer(cin_l + cin_g, cout_l + cout_g, 1, rng.substream("skip"), stride=2, bias=False)

    def __call__(self, x_l: Tensor, x_g: Optional[Tensor]) -> tuple[Tensor, Tensor]:
        y_l, y_g = self.ffc(x_l, x_g)
        x_cat = x_l if x_g is None else concat([x_l, x_g], axis=1)
        short = self.skip(x_cat)
        y_l = add(y_l, narrow(short, 1, 0, self.cout_l))
        y_g = add(y_g, narrow(short, 1, self.cout_l, short.shape[1] - self.cout_l))
        return y_l, y_g


@dataclass
class EncoderFeatures:
    """Per-scale feature maps, finest first, plus the global style code."""

    features: list  # features[i] has spatial size resolution / 2^(i+1)
    style: Tensor   # [B, style_dim], unit l2 norm


class FfcEncoder(Module):
    """Multi-scale encoder over [masked image, mask]; emits skips and a style code."""

    def __init__(
        self,
        resolution: int,
        widths: tuple,
        style_dim: int,
        rng: Prng,
        global_ratio: float = 0.5,
        in_channels: int = 4,
    ):
        levels = len(widths)
        if resolution < 4 or resolution & (resolution - 1):
            raise ValueError(f"resolution must be a power of two >= 4, got {resolution}")
        if resolution >> levels < 2:
            raise ValueError(
                f"resolution {resolution} too small for {levels} halvings (coarsest scale must be >= 2)"
            )
        self.base = resolution >> levels
        self.widths = tuple(widths)
        splits = []
        for w in widths:
            wg = int(round(w * global_ratio))
            splits.append((w - wg, wg))
        self.splits = splits
        stages = []
        cin_l, cin_g = in_channels, 0
        for i, (wl, wg) in enumerate(splits):
            stages.append(EncoderStage(cin_l, cin_g, wl, wg, rng.substream(f"stage{i}")))
            cin_l, cin_g = wl, wg
        self.stages = stages
        flat = widths[-1] * self.base * self.base
        self.style_fc = FcLayer(flat, style_dim, rng.substream("style_fc"), gain=1.0)

    def __call__(self, x: Tensor) -> EncoderFeatures:
        feats = []
        h_l, h_g = x, None
        for stage in self.stages:
            h_l, h_g = stage(h_l, h_g)
            feats.append(concat([h_l, h_g], axis=1))
        coarsest = feats[-1]
        b = coarsest.shape[0]
        s = self.style_fc(reshape(coarsest, (b, -1)))
        return EncoderFeatures(features=feats, style=l2_normalize(s, axis=1, eps=1e-12))


def identity_1x1(layer: Conv2dLayer) -> None:
    """Configure a 1x1 conv layer as the identity map (verification helper)."""
    cout, cin = layer.w.shape[0], layer.w.shape[1]
    if cout != cin or layer.w.shape[2] != 1:
        raise ValueError("identity config needs a square-channel 1x1 conv")
    # stored weights meet the run-time scale, so divide it out here
    eye = np.eye(cout).reshape(cout, cin, 1, 1) / layer.scale
    layer.w = Tensor(eye, requires_grad=True)
    if layer.b is not None:
        layer.b = Tensor(np.zeros(cout), requires_grad=True)
