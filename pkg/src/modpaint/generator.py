"""Inpainting generator (encoder + dual-branch decoder) and the critic.

Data flow for a batch: the encoder reads [masked image, mask] and yields a
feature pyramid plus a unit-norm style code s; a mapping network turns the
latent z into w; their concatenation g modulates every decoder block.  The
decoder runs two branches from the coarsest feature: a global branch F_g
(style-modulated convs, encoder skips fused in) and a spatial branch F_s
(spatially modulated by the global branch's intermediate X, plus noise).
The image head reads the finest F_s; the hole composite pastes generated
content only where the mask is one, so visible pixels pass through
bit-exactly.

Mask convention everywhere: 1 = hole to fill, 0 = visible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ffc import FfcEncoder
from .layers import Conv2dLayer, FcLayer, Module
from .modulation import CascadeStage
from .prng import Prng
from .tensor import (
    Tensor,
    add,
    add_scalar,
    concat,
    leaky_relu,
    mul,
    neg,
    pixel_norm,
    reshape,
    tanh,
)


def one_minus(m: Tensor) -> Tensor:
    return add_scalar(neg(m), 1.0)


@dataclass
class GeneratorConfig:
    resolution: int = 64
    widths: tuple = (20, 40, 64, 80)  # finest -> coarsest encoder widths
    style_dim: int = 128
    z_dim: int = 64
    mapping_dim: int = 128
    mapping_depth: int = 2
    global_ratio: float = 0.5

    @property
    def levels(self) -> int:
        return len(self.widths)

    @property
    def g_dim(self) -> int:
        return self.style_dim + self.mapping_dim


class MappingNetwork(Module):
    """z -> w: pixel-norm then a stack of fc + leaky layers.

    depth 0 reduces to w = pixel_norm(z) (z_dim must equal mapping_dim).
    """

    def __init__(self, z_dim: int, w_dim: int, depth: int, rng: Prng):
        if depth == 0 and z_dim != w_dim:
            raise ValueError(f"depth-0 mapping needs z_dim == mapping_dim, got {z_dim} vs {w_dim}")
        layers = []
        din = z_dim
        for i in range(depth):
            layers.append(FcLayer(din, w_dim, rng.substream(f"fc{i}")))
            din = w_dim
        self.layers = layers

    def __call__(self, z: Tensor) -> Tensor:
        h = pixel_norm(z)
        for layer in self.layers:
            h = leaky_relu(layer(h), 0.2)
        return h


def _check_inpainting_input(x: Tensor, m: Tensor, resolution: int) -> None:
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"image must be [B,3,H,W], got {x.shape}")
    if m.ndim != 4 or m.shape[1] != 1:
        raise ValueError(f"mask must be [B,1,H,W], got {m.shape}")
    if x.shape[0] != m.shape[0] or x.shape[2:] != m.shape[2:]:
        raise ValueError(f"image/mask shapes disagree: {x.shape} vs {m.shape}")
    if x.shape[2] != resolution or x.shape[3] != resolution:
        raise ValueError(f"expected {resolution}x{resolution} input, got {x.shape[2]}x{x.shape[3]}")
    md = m.data
    if not np.logical_or(md == 0.0, md == 1.0).all():
        raise ValueError("mask must be binary (0 = visible, 1 = hole)")


class Generator(Module):
    def __init__(self, config: GeneratorConfig, rng: Prng):
        self.config = config
        cfg = config
        self.encoder = FfcEncoder(
            cfg.resolution, cfg.widths, cfg.style_dim, rng.substream("enc"), cfg.global_ratio
        )
        self.mapping = MappingNetwork(
            cfg.z_dim, cfg.mapping_dim, cfg.mapping_depth, rng.substream("map")
        )
        levels = cfg.levels
        stages = []
        fusers = []
        for j in range(levels):
            cin = cfg.widths[levels - 1 - j]
            cout = cfg.widths[levels - 2 - j] if j <= levels - 2 else cfg.widths[0]
            stages.append(CascadeStage(cin, cout, cfg.g_dim, rng.substream(f"stage{j}"),
                                       last=j == levels - 1))
            if j <= levels - 2:
                fusers.append(Conv2dLayer(2 * cout, cout, 1, rng.substream(f"fuse{j}")))
        self.stages = stages
        self.fusers = fusers
        self.head = Conv2dLayer(cfg.widths[0], 3, 1, rng.substream("head"), gain=1.0)

    def _decode(self, feats, g: Tensor, noise_maps):
        trace = {"x": [], "f_g": [], "f_s": []}
        f_g = f_s = feats[-1]
        levels = self.config.levels
        for j, stage in enumerate(self.stages):
            noise = noise_maps[j] if noise_maps is not None else None
            x_mid, f_g_out, f_s = stage(f_g, f_s, g, noise)
            # the last stage has no second global conv; its midpoint stands in
            f_g = x_mid if f_g_out is None else f_g_out
            if j <= levels - 2:
                skip = feats[levels - 2 - j]
                f_g = self.fusers[j](concat([f_g, skip], axis=1))
            trace["x"].append(x_mid)
            trace["f_g"].append(f_g)
            trace["f_s"].append(f_s)
        return f_g, f_s, trace

    def sample_noise(self, batch: int, rng: Prng) -> list:
        """Per-stage [B,1,H,W] noise maps from a dedicated substream."""
        maps = []
        size = self.config.resolution >> self.config.levels
        for j in range(self.config.levels):
            size *= 2
            maps.append(Tensor(rng.substream(f"stage{j}").normal((batch, 1, size, size))))
        return maps

    def _synthesize(self, x: Tensor, m: Tensor, z: Tensor, noise_maps):
        """Shared forward: full-image prediction y plus m3/visible and the trace."""
        _check_inpainting_input(x, m, self.config.resolution)
        if z.ndim != 2 or z.shape[1] != self.config.z_dim:
            raise ValueError(f"z must be [B,{self.config.z_dim}], got {z.shape}")
        m3 = concat([m, m, m], axis=1)
        visible = mul(x, one_minus(m3))
        enc_in = concat([visible, m], axis=1)
        enc = self.encoder(enc_in)
        w = self.mapping(z)
        g = concat([enc.style, w], axis=1)
        _, f_s, trace = self._decode(enc.features, g, noise_maps)
        y = tanh(self.head(f_s))
        trace.update({"enc": enc.features, "style": enc.style, "w": w, "g": g,
                      "y": y})
        return y, m3, visible, trace

    def predict(
        self,
        x: Tensor,
        m: Tensor,
        z: Tensor,
        noise_maps: Optional[list] = None,
    ) -> Tensor:
        """Full-image prediction before compositing.

        Training drives this whole image toward the data distribution so the
        network must reconstruct the visible region too, not only the hole;
        inference composites via generate().
        """
        y, _, _, _ = self._synthesize(x, m, z, noise_maps)
        return y

    def generate(
        self,
        x: Tensor,
        m: Tensor,
        z: Tensor,
        noise_maps: Optional[list] = None,
        with_trace: bool = False,
    ):
        """Inpaint: returns the composite x_hat (and the full trace on request)."""
        y, m3, visible, trace = self._synthesize(x, m, z, noise_maps)
        x_hat = add(mul(y, m3), visible)
        if with_trace:
            trace["x_hat"] = x_hat
            return x_hat, trace
        return x_hat

    def dump_features(self, x: Tensor, m: Tensor, z: Tensor, noise_maps=None) -> dict:
        """Channel-mean absolute activation per scale for the three feature kinds.

        Returns {name: 2-D float array}; names are enc_sK / global_sK /
        spatial_sK where K is the spatial size of the map.
        """
        _, trace = self.generate(x, m, z, noise_maps, with_trace=True)
        out = {}
        for f in trace["enc"]:
            out[f"enc_s{f.shape[2]}"] = np.abs(f.data).mean(axis=(0, 1))
        for f in trace["f_g"]:
            out[f"global_s{f.shape[2]}"] = np.abs(f.data).mean(axis=(0, 1))
        for f in trace["f_s"]:
            out[f"spatial_s{f.shape[2]}"] = np.abs(f.data).mean(axis=(0, 1))
        return out


class Discriminator(Module):
    """Mask-conditional critic: strided convs over [image, mask] to a logit."""

    def __init__(self, config: GeneratorConfig, rng: Prng):
        self.config = config
        cfg = config
        convs = []
        cin = 4
        for i, w in enumerate(cfg.widths):
            convs.append(Conv2dLayer(cin, w, 3, rng.substream(f"conv{i}"), stride=2))
            cin = w
        self.convs = convs
        base = cfg.resolution >> cfg.levels
        self.final_conv = Conv2dLayer(cin, cin, 3, rng.substream("final"))
        self.fc_out = FcLayer(cin * base * base, 1, rng.substream("fc"), gain=1.0)

    def __call__(self, x: Tensor, m: Tensor) -> Tensor:
        _check_inpainting_input(x, m, self.config.resolution)
        h = concat([x, m], axis=1)
        for conv in self.convs:
            h = leaky_relu(conv(h), 0.2)
        h = leaky_relu(self.final_conv(h), 0.2)
        return self.fc_out(reshape(h, (h.shape[0], -1)))
