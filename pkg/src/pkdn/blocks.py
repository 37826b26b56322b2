"""Parameterized building blocks for the teacher and student networks.

Every convolution is 3x3 with zero padding 1 and a bias unless noted.  With
``conv(i, o, k) = o*i*k*k + o`` the parameter census of each block is::

    ChannelAttention(c, r)   conv(c, c/r, 1) + conv(c/r, c, 1)
    SpatialAttention(k)      conv(2, 1, k)
    RCAB(c, r)               2*conv(c, c, 3) + ChannelAttention(c, r)
    RCAG(c, r, B)            B*RCAB(c, r) + conv(c, c, 3)
    PFB(c, m, r, k)          conv(m, c, 3) + conv(c, c, 3) + 2*conv(2c, c, 3)
                             + ChannelAttention(c, r) + SpatialAttention(k)
    ProjectionFunction(c)    2*conv(c, c, 3)
    FFB(c, r)                ProjectionFunction(c) + ChannelAttention(c, r)
    Downsample(c)            conv(4c, c, 3)
    Upsample(c)              conv(c, 4c, 3)

Weights are drawn from a fan-in scaled normal, std = sqrt(gain / fan_in) with
gain 2 in front of a relu and 1 elsewhere;
biases start at zero.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Parameter, ShapeError, Tensor, get_dtype


class Module:
    """Minimal parameter container; walks attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def assign_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def fill_(self, value: float) -> "Module":
        """Overwrite every weight and bias with ``value`` (used for degenerate-case checks)."""
        for p in self.parameters():
            p.data[...] = value
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _check_channels(x: Tensor, channels: int, block: str) -> None:
    if x.shape[1] != channels:
        raise ShapeError(f"{block}: channel dimension c={x.shape[1]} does not match configured channels={channels}")


class Conv(Module):
    """Same-padded conv; ``gain`` is 2 when a relu follows and 1 for linear outputs."""

    def __init__(self, in_c: int, out_c: int, k: int, rng: np.random.Generator, gain: float = 1.0):
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")
        dtype = get_dtype()
        std = np.sqrt(gain / (in_c * k * k))
        self.weight = Parameter(rng.normal(0.0, std, size=(out_c, in_c, k, k)).astype(dtype))
        self.bias = Parameter(np.zeros((1, out_c, 1, 1), dtype=dtype))
        self._k = k

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, 1, self._k // 2)


class ChannelAttention(Module):
    """x * sigmoid(W2 relu(W1 gap(x))) with a per-channel gate."""

    def __init__(self, channels: int, reduction: int, rng):
        if channels % reduction:
            raise ValueError(f"channels={channels} not divisible by reduction={reduction}")
        self.reduce = Conv(channels, channels // reduction, 1, rng, gain=2.0)
        self.expand = Conv(channels // reduction, channels, 1, rng)
        self._channels = channels

    def gate(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.expand(ops.relu(self.reduce(ops.global_avg_pool(x)))))

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self._channels, "channel_attention")
        return ops.mul_broadcast(x, self.gate(x))


class SpatialAttention(Module):
    """x * sigmoid(conv_kxk([mean_c(x), max_c(x)])) with a per-position gate."""

    def __init__(self, channels: int, kernel: int, rng):
        self.conv = Conv(2, 1, kernel, rng)
        self._channels = channels

    def gate(self, x: Tensor) -> Tensor:
        pooled = ops.concat_channels(ops.channel_mean_map(x), ops.channel_max_map(x))
        return ops.sigmoid(self.conv(pooled))

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self._channels, "spatial_attention")
        return ops.mul_broadcast(x, self.gate(x))


class RCAB(Module):
    def __init__(self, channels: int, reduction: int, rng):
        self.conv1 = Conv(channels, channels, 3, rng, gain=2.0)
        self.conv2 = Conv(channels, channels, 3, rng)
        self.ca = ChannelAttention(channels, reduction, rng)
        self._channels = channels

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self._channels, "rcab")
        return ops.add(x, self.ca(self.conv2(ops.relu(self.conv1(x)))))


class RCAG(Module):
    def __init__(self, channels: int, reduction: int, n_rcab: int, rng):
        if n_rcab < 1:
            raise ValueError("an RCAG needs at least one RCAB")
        self.rcabs = [RCAB(channels, reduction, rng) for _ in range(n_rcab)]
        self.conv = Conv(channels, channels, 3, rng)
        self._channels = channels

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self._channels, "rcag")
        y = x
        for block in self.rcabs:
            y = block(y)
        return ops.add(x, self.conv(y))


class PFB(Module):
    """Parsing-map fusion.

    The parsing map is brought to the feature resolution by nearest
    resizing, both inputs are projected by their own conv, fused, gated by
    parallel channel and spatial attention, fused again and added back to
    the feature.
    """

    def __init__(self, channels: int, n_classes: int, reduction: int, spatial_kernel: int, rng):
        self.proj_parsing = Conv(n_classes, channels, 3, rng)
        self.proj_feature = Conv(channels, channels, 3, rng)
        self.fuse_in = Conv(2 * channels, channels, 3, rng)
        self.ca = ChannelAttention(channels, reduction, rng)
        self.sa = SpatialAttention(channels, spatial_kernel, rng)
        self.fuse_out = Conv(2 * channels, channels, 3, rng)
        self._channels = channels
        self._n_classes = n_classes

    def forward(self, f: Tensor, parsing: Tensor) -> Tensor:
        _check_channels(f, self._channels, "pfb")
        if parsing.shape[1] != self._n_classes:
            raise ShapeError(f"pfb: parsing has {parsing.shape[1]} class planes, expected n_classes={self._n_classes}")
        if parsing.shape[0] != f.shape[0]:
            raise ShapeError(f"pfb: batch dimension n differs ({f.shape[0]} vs {parsing.shape[0]})")
        p = parsing
        if p.shape[2:] != f.shape[2:]:
            p = ops.nearest_resize(p, f.shape[2], f.shape[3])
        a = self.proj_parsing(p)
        b = self.proj_feature(f)
        c = self.fuse_in(ops.concat_channels(a, b))
        d = ops.concat_channels(self.ca(c), self.sa(c))
        return ops.add(f, self.fuse_out(d))


class ProjectionFunction(Module):
    """Error-feedback refiner: conv -> relu -> conv, channel preserving."""

    def __init__(self, channels: int, rng):
        self.conv1 = Conv(channels, channels, 3, rng, gain=2.0)
        self.conv2 = Conv(channels, channels, 3, rng)
        self._channels = channels

    def forward(self, e: Tensor) -> Tensor:
        _check_channels(e, self._channels, "projection_function")
        return self.conv2(ops.relu(self.conv1(e)))


class FFB(Module):
    """Fuses a retained same-resolution feature: CA(f + PF(f - f_prev))."""

    def __init__(self, channels: int, reduction: int, rng):
        self.pf = ProjectionFunction(channels, rng)
        self.ca = ChannelAttention(channels, reduction, rng)

    def forward(self, f: Tensor, f_prev: Tensor) -> Tensor:
        if f.shape != f_prev.shape:
            raise ShapeError(f"ffb: current feature {f.shape} and retained feature {f_prev.shape} differ")
        return self.ca(ops.add(f, self.pf(ops.sub(f, f_prev))))


class Downsample(Module):
    """pixel_unshuffle(., 2) then a 4c -> c conv; halves h and w."""

    def __init__(self, channels: int, rng):
        self.conv = Conv(4 * channels, channels, 3, rng)
        self._channels = channels

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self._channels, "downsample_block")
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ShapeError(f"downsample_block: spatial dims {x.shape[2]}x{x.shape[3]} must be even")
        return self.conv(ops.pixel_unshuffle(x, 2))


class Upsample(Module):
    """A c -> 4c conv then pixel_shuffle(., 2); doubles h and w."""

    def __init__(self, channels: int, rng):
        self.conv = Conv(channels, 4 * channels, 3, rng)
        self._channels = channels

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self._channels, "upsample_block")
        return ops.pixel_shuffle(self.conv(x), 2)
