"""Parameterised building blocks.

Every layer registers its parameters in a shared ``ParamStore`` under a dotted
name prefix when it is constructed, and reads them back on each call, so a
store loaded from a checkpoint drives the same layer objects unchanged.
"""

import math
import zlib
from typing import Optional, Tuple, Union

import numpy as np

from src.numerics.optim import ParamStore
from src.numerics.tensor import Tensor, conv2d, group_norm, matmul, softmax


def layer_rng(store: ParamStore, name: str) -> np.random.Generator:
    """Initialisation stream fixed by the store seed and the layer name."""
    return np.random.default_rng([store.seed, zlib.crc32(name.encode("utf-8"))])


def kaiming_uniform(
    rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int
) -> np.ndarray:
    """Kaiming-uniform draw with bound ``sqrt(6 / fan_in)``."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def norm_groups(channels: int, groups: int) -> int:
    """Largest group count not above ``groups`` that divides ``channels``."""
    return math.gcd(channels, max(1, groups))


class Conv2d:
    """2-D convolution with 'same' padding by default."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel: Union[int, Tuple[int, int]] = 3,
        stride: int = 1,
        padding: Optional[Union[int, Tuple[int, int]]] = None,
        zero_init: bool = False,
    ) -> None:
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.store = store
        self.name = name
        self.stride = stride
        self.padding = padding if padding is not None else (kh // 2, kw // 2)
        shape = (out_channels, in_channels, kh, kw)
        if zero_init:
            weight = np.zeros(shape)
        else:
            weight = kaiming_uniform(layer_rng(store, name), shape, in_channels * kh * kw)
        store.add(f"{name}.weight", weight)
        store.add(f"{name}.bias", np.zeros(out_channels))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(
            x,
            self.store[f"{self.name}.weight"],
            self.store[f"{self.name}.bias"],
            stride=self.stride,
            padding=self.padding,
        )


class Linear:
    """Affine map over the last axis of a (B, in) tensor."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        in_features: int,
        out_features: int,
        zero_init: bool = False,
    ) -> None:
        self.store = store
        self.name = name
        shape = (in_features, out_features)
        weight = np.zeros(shape) if zero_init else kaiming_uniform(layer_rng(store, name), shape, in_features)
        store.add(f"{name}.weight", weight)
        store.add(f"{name}.bias", np.zeros(out_features))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.store[f"{self.name}.weight"]) + self.store[f"{self.name}.bias"]


class GroupNorm:
    """Group normalisation with learned per-channel scale and shift."""

    def __init__(self, store: ParamStore, name: str, channels: int, groups: int = 4) -> None:
        self.store = store
        self.name = name
        self.groups = norm_groups(channels, groups)
        store.add(f"{name}.gamma", np.ones(channels))
        store.add(f"{name}.beta", np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm(
            x, self.groups, self.store[f"{self.name}.gamma"], self.store[f"{self.name}.beta"]
        )


class ResBlock:
    """norm, SiLU, conv twice, plus a (projected) skip connection."""

    def __init__(
        self, store: ParamStore, name: str, in_channels: int, out_channels: int, groups: int = 4
    ) -> None:
        self.norm1 = GroupNorm(store, f"{name}.norm1", in_channels, groups)
        self.conv1 = Conv2d(store, f"{name}.conv1", in_channels, out_channels)
        self.norm2 = GroupNorm(store, f"{name}.norm2", out_channels, groups)
        self.conv2 = Conv2d(store, f"{name}.conv2", out_channels, out_channels)
        self.skip = (
            Conv2d(store, f"{name}.skip", in_channels, out_channels, kernel=1)
            if in_channels != out_channels
            else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv1(self.norm1(x).silu())
        h = self.conv2(self.norm2(h).silu())
        return (self.skip(x) if self.skip is not None else x) + h


class SpatialAttention:
    """Single-head self-attention over the pixels of each (C, H, W) map.

    The output projection starts at zero, so a fresh block is the identity.
    """

    def __init__(self, store: ParamStore, name: str, channels: int, groups: int = 4) -> None:
        self.channels = channels
        self.norm = GroupNorm(store, f"{name}.norm", channels, groups)
        self.query = Conv2d(store, f"{name}.query", channels, channels, kernel=1)
        self.key = Conv2d(store, f"{name}.key", channels, channels, kernel=1)
        self.value = Conv2d(store, f"{name}.value", channels, channels, kernel=1)
        self.proj = Conv2d(store, f"{name}.proj", channels, channels, kernel=1, zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        batch, channels, height, width = x.shape
        h = self.norm(x)
        pixels = height * width
        q = self.query(h).reshape(batch, channels, pixels).transpose(0, 2, 1)
        k = self.key(h).reshape(batch, channels, pixels)
        v = self.value(h).reshape(batch, channels, pixels)
        weights = softmax(matmul(q, k) * (1.0 / math.sqrt(channels)), axis=-1)
        attended = matmul(v, weights.transpose(0, 2, 1)).reshape(batch, channels, height, width)
        return x + self.proj(attended)
