"""Two-branch condition network over the context frames.

The latent branch reuses the frozen autoencoder encoder; the pixel branch is
a small strided conv stack with self-attention at its coarsest stage, trained
together with the denoiser. Both conditions are replicated over the N
prediction steps and concatenated with the noisy latent along channels.
"""

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from src.core.autoencoder import Autoencoder
from src.numerics.layers import Conv2d, SpatialAttention
from src.numerics.optim import ParamStore
from src.numerics.tensor import Tensor, as_tensor, concat, no_grad
from src.utils.error_handler import ContractError, ShapeError

CONTEXT_FRAMES = 4


@dataclass
class ConditionBundle:
    """Latent and pixel conditions sharing (N, h, w)."""

    latent_condition: Tensor
    pixel_condition: Tensor

    def __post_init__(self) -> None:
        a, b = self.latent_condition.shape, self.pixel_condition.shape
        if a[0] != b[0] or a[2:] != b[2:]:
            raise ShapeError(f"latent condition {a} and pixel condition {b} disagree on (N, h, w)")

    @property
    def steps(self) -> int:
        return self.latent_condition.shape[0]

    @property
    def channels(self) -> int:
        return self.latent_condition.shape[1] + self.pixel_condition.shape[1]


def build_latent_condition(
    context: Union[np.ndarray, Tensor],
    autoencoder: Autoencoder,
    steps: int,
    context_frames: int = CONTEXT_FRAMES,
) -> Tensor:
    """Encode context frames, merge time into channels and replicate.

    (M, 1, H, W) frames give encoder means (M, C, h, w), merged to
    (1, M*C, h, w) and repeated to (N, M*C, h, w). The encoder runs without
    gradient recording so its parameters are never touched.

    Raises:
        ContractError: If the context does not hold ``context_frames`` frames
    """
    frames = as_tensor(context)
    if frames.shape[0] != context_frames:
        raise ContractError(f"expected {context_frames} context frames, got {frames.shape[0]}")
    with no_grad():
        mean = autoencoder.encode(frames).mean.data
    m, c, h, w = mean.shape
    merged = mean.reshape(1, m * c, h, w)
    return Tensor(np.repeat(merged, steps, axis=0))


class PixelConditionEncoder:
    """Maps (M, 1, H, W) context frames to a (1, C_p, H/f, W/f) condition."""

    def __init__(
        self,
        store: ParamStore,
        context_frames: int = CONTEXT_FRAMES,
        out_channels: int = 12,
        downsample_factor: int = 8,
        groups: int = 4,
        rate_ceiling: float = 32.0,
        prefix: str = "pixel_encoder",
    ) -> None:
        self.context_frames = context_frames
        self.rate_ceiling = rate_ceiling
        self.out_channels = out_channels
        self.downsample_factor = downsample_factor
        stages = int(math.log2(downsample_factor))
        self.conv_in = Conv2d(store, f"{prefix}.conv_in", context_frames, out_channels)
        self.downs = [
            Conv2d(store, f"{prefix}.down{i}", out_channels, out_channels, stride=2, padding=1)
            for i in range(stages)
        ]
        self.attention = SpatialAttention(store, f"{prefix}.attention", out_channels, groups)
        self.conv_out = Conv2d(store, f"{prefix}.conv_out", out_channels, out_channels)

    def __call__(self, context: Union[np.ndarray, Tensor]) -> Tensor:
        frames = as_tensor(context)
        if frames.shape[0] != self.context_frames:
            raise ContractError(f"expected {self.context_frames} context frames, got {frames.shape[0]}")
        m, _, height, width = frames.shape
        factor = self.downsample_factor
        if height % factor or width % factor:
            raise ShapeError(f"context size {height}x{width} not divisible by factor {factor}")
        h = self.conv_in(frames.reshape(1, m, height, width) * (1.0 / self.rate_ceiling)).silu()
        for down in self.downs:
            h = down(h).silu()
        return self.conv_out(self.attention(h))


def build_pixel_condition(
    context: Union[np.ndarray, Tensor], encoder: PixelConditionEncoder, steps: int
) -> Tensor:
    """Pixel-space condition replicated to (N, C_p, h, w)."""
    single = encoder(context)
    return single.broadcast_to((steps,) + single.shape[1:])


def build_conditions(
    context: Union[np.ndarray, Tensor],
    autoencoder: Autoencoder,
    pixel_encoder: PixelConditionEncoder,
    steps: int,
) -> ConditionBundle:
    return ConditionBundle(
        build_latent_condition(context, autoencoder, steps, pixel_encoder.context_frames),
        build_pixel_condition(context, pixel_encoder, steps),
    )


def concat_with_noise(zt: Union[np.ndarray, Tensor], cond: ConditionBundle) -> Tensor:
    """``[z_t | latent condition | pixel condition]`` along channels.

    Raises:
        ShapeError: If (N, h, w) of ``zt`` differs from the conditions
    """
    zt = as_tensor(zt)
    expected = (cond.steps,) + cond.latent_condition.shape[2:]
    if (zt.shape[0],) + zt.shape[2:] != expected:
        raise ShapeError(f"noisy latent {zt.shape} does not match condition (N, h, w) {expected}")
    return concat([zt, cond.latent_condition, cond.pixel_condition], axis=1)
