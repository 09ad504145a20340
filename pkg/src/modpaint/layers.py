"""Parameter containers and basic trainable layers.

Modules hold Tensors as attributes; named_params() flattens them into a
dot-separated dict and load_state() rebinds them from such a dict.  All
updates are functional: a new Tensor replaces the attribute, the old one
is never written through.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .prng import Prng
from .tensor import Tensor, add_channel_bias, conv2d, fc, mul_scalar

LEAKY_GAIN = math.sqrt(2.0 / (1.0 + 0.2 * 0.2))


class Module:
    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_params(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_params(f"{key}.{i}."))
        return out

    def load_state(self, state: dict[str, Tensor], prefix: str = "") -> None:
        """Rebind every parameter from a full-name dict (checkpoint load)."""
        for name, value in list(vars(self).items()):
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    if key not in state:
                        raise KeyError(f"missing parameter {key!r}")
                    new = state[key]
                    if new.shape != value.shape:
                        raise ValueError(
                            f"parameter {key!r}: shape {new.shape} does not match {value.shape}"
                        )
                    new.requires_grad = True
                    setattr(self, name, new)
            elif isinstance(value, Module):
                value.load_state(state, f"{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        item.load_state(state, f"{key}.{i}.")

    def apply_updates(self, new_params: dict[str, Tensor]) -> None:
        self.load_state(new_params)


def unit_weight(rng: Prng, shape) -> Tensor:
    return Tensor(rng.normal(shape), requires_grad=True)


class Conv2dLayer(Module):
    """Conv with the fan-in scale applied at run time, not baked into init.

    Weights are stored unit-variance and multiplied by gain/sqrt(fan_in) in
    the forward pass, so a fixed-size optimizer step moves the effective
    weights of every layer by the same relative amount regardless of width.
    """

    def __init__(
        self,
        cin: int,
        cout: int,
        k: int,
        rng: Prng,
        stride: int = 1,
        padding: Optional[int] = None,
        bias: bool = True,
        gain: float = LEAKY_GAIN,
        zero_weight: bool = False,
    ):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.scale = gain / math.sqrt(cin * k * k)
        if zero_weight:
            self.w = Tensor(np.zeros((cout, cin, k, k)), requires_grad=True)
        else:
            self.w = unit_weight(rng.substream("w"), (cout, cin, k, k))
        self.b = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = conv2d(x, mul_scalar(self.w, self.scale), self.stride, self.padding)
        if self.b is not None:
            out = add_channel_bias(out, self.b)
        return out


class FcLayer(Module):
    """Fully connected layer with the same run-time weight scaling."""

    def __init__(
        self,
        din: int,
        dout: int,
        rng: Prng,
        bias: bool = True,
        gain: float = LEAKY_GAIN,
        zero_weight: bool = False,
        bias_init: float = 0.0,
    ):
        self.scale = gain / math.sqrt(din)
        if zero_weight:
            self.w = Tensor(np.zeros((din, dout)), requires_grad=True)
        else:
            self.w = unit_weight(rng.substream("w"), (din, dout))
        self.b = Tensor(np.full(dout, bias_init), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return fc(x, mul_scalar(self.w, self.scale), self.b)
