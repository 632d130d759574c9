"""Noise-prediction network over a block of N latent frames.

The reference network factorises space and time: every block runs a spatial
convolution on each frame and a temporal convolution along the frame axis at
each pixel, with the timestep injected as a per-channel scale and shift.
"""

import math
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from src.numerics.layers import Conv2d, GroupNorm, Linear
from src.numerics.optim import ParamStore
from src.numerics.tensor import Tensor
from src.utils.config import Config
from src.utils.error_handler import ConfigError, GridRangeError, ShapeError


class NoisePredictor(Protocol):
    """Anything that predicts the noise in ``[z_t | conditions]`` at 0-based step ``t``."""

    out_channels: int

    def predict_noise(self, zt_with_cond: Tensor, t: int) -> Tensor:
        ...


@dataclass(frozen=True)
class DenoiserConfig:
    """Shape and size of the reference denoiser."""

    in_channels: int
    out_channels: int
    base_channels: int = 32
    depth: int = 2
    temporal_kernel: int = 3
    spatial_kernel: int = 3
    groups: int = 4
    embed_dim: int = 32
    t_max: int = 1000

    def __post_init__(self) -> None:
        for name in ("in_channels", "out_channels", "base_channels", "depth", "temporal_kernel", "spatial_kernel", "t_max"):
            if getattr(self, name) < 1:
                raise ConfigError(f"denoiser {name} must be >= 1, got {getattr(self, name)}")
        for name in ("temporal_kernel", "spatial_kernel"):
            if getattr(self, name) % 2 == 0:
                raise ConfigError(f"denoiser {name} must be odd, got {getattr(self, name)}")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise ConfigError(f"timestep embedding size must be even, got {self.embed_dim}")

    @classmethod
    def from_config(cls, cfg: Config, in_channels: int) -> "DenoiserConfig":
        return cls(
            in_channels=in_channels,
            out_channels=cfg.latent_channels,
            base_channels=cfg.denoiser_channels,
            depth=cfg.denoiser_depth,
            temporal_kernel=cfg.temporal_kernel,
            spatial_kernel=cfg.spatial_kernel,
            groups=cfg.norm_groups,
            embed_dim=cfg.embed_dim,
            t_max=cfg.t_max,
        )


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal features ``[sin(t * f_k), cos(t * f_k)]`` with geometric frequencies."""
    if dim < 2 or dim % 2:
        raise ConfigError(f"timestep embedding size must be even, got {dim}")
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = float(t) * freqs
    return np.concatenate([np.sin(args), np.cos(args)])


class SpacetimeBlock:
    """Residual block: spatial conv per frame, then temporal conv per pixel.

    The output projection starts at zero so a fresh block is the identity.
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        channels: int,
        temporal_kernel: int = 3,
        spatial_kernel: int = 3,
        groups: int = 4,
        embed_hidden: Optional[int] = None,
    ) -> None:
        self.channels = channels
        self.temporal_kernel = temporal_kernel
        self.norm_spatial = GroupNorm(store, f"{name}.norm_spatial", channels, groups)
        self.spatial = Conv2d(store, f"{name}.spatial", channels, channels, kernel=spatial_kernel)
        self.norm_temporal = GroupNorm(store, f"{name}.norm_temporal", channels, groups)
        self.temporal = Conv2d(
            store,
            f"{name}.temporal",
            channels,
            channels,
            kernel=(temporal_kernel, 1),
            padding=(temporal_kernel // 2, 0),
        )
        self.proj = Conv2d(store, f"{name}.proj", channels, channels, kernel=1, zero_init=True)
        self.modulation = (
            Linear(store, f"{name}.modulation", embed_hidden, 2 * channels) if embed_hidden else None
        )

    def __call__(self, x: Tensor, embedding: Optional[Tensor] = None) -> Tensor:
        frames, channels, height, width = x.shape
        h = self.norm_spatial(x)
        if embedding is not None and self.modulation is not None:
            params = self.modulation(embedding)
            scale = params[:, :channels].reshape(1, channels, 1, 1)
            shift = params[:, channels:].reshape(1, channels, 1, 1)
            h = h * (scale + 1.0) + shift
        h = self.spatial(h.silu())
        h = self.norm_temporal(h).silu()
        # (N, C, H, W) -> (1, C, N, H*W): a (k, 1) kernel mixes frames at each pixel.
        h = h.transpose(1, 0, 2, 3).reshape(1, channels, frames, height * width)
        h = self.temporal(h)
        h = h.reshape(channels, frames, height, width).transpose(1, 0, 2, 3)
        return x + self.proj(h)


class Denoiser:
    """Reference noise predictor: conv in, spacetime blocks, zero-initialised conv out."""

    def __init__(self, store: ParamStore, cfg: DenoiserConfig, prefix: str = "denoiser") -> None:
        self.cfg = cfg
        self.out_channels = cfg.out_channels
        hidden = 2 * cfg.embed_dim
        self.embed_in = Linear(store, f"{prefix}.embed.0", cfg.embed_dim, hidden)
        self.embed_out = Linear(store, f"{prefix}.embed.1", hidden, hidden)
        self.conv_in = Conv2d(store, f"{prefix}.conv_in", cfg.in_channels, cfg.base_channels, kernel=cfg.spatial_kernel)
        self.blocks = [
            SpacetimeBlock(
                store,
                f"{prefix}.block{i}",
                cfg.base_channels,
                cfg.temporal_kernel,
                cfg.spatial_kernel,
                cfg.groups,
                embed_hidden=hidden,
            )
            for i in range(cfg.depth)
        ]
        self.norm_out = GroupNorm(store, f"{prefix}.norm_out", cfg.base_channels, cfg.groups)
        self.conv_out = Conv2d(
            store, f"{prefix}.conv_out", cfg.base_channels, cfg.out_channels, kernel=cfg.spatial_kernel, zero_init=True
        )
        self.dtype = store.dtype

    def embed(self, t: int) -> Tensor:
        features = Tensor(timestep_embedding(t, self.cfg.embed_dim)[None, :].astype(self.dtype))
        return self.embed_out(self.embed_in(features).silu())

    def predict_noise(self, zt_with_cond: Tensor, t: int) -> Tensor:
        """Predict the noise component.

        Args:
            zt_with_cond: (N, C_in, h, w) noisy latent concatenated with conditions
            t: 0-based step index in [0, T_max)

        Returns:
            (N, C_z, h, w) noise estimate

        Raises:
            GridRangeError: If ``t`` is outside [0, T_max)
            ShapeError: If the input channel count differs from the configuration
        """
        if not 0 <= t < self.cfg.t_max:
            raise GridRangeError(f"timestep {t} outside [0, {self.cfg.t_max})")
        if zt_with_cond.ndim != 4 or zt_with_cond.shape[1] != self.cfg.in_channels:
            raise ShapeError(
                f"denoiser expects (N, {self.cfg.in_channels}, h, w) input, got {zt_with_cond.shape}"
            )
        embedding = self.embed(t)
        h = self.conv_in(zt_with_cond)
        for block in self.blocks:
            h = block(h, embedding)
        return self.conv_out(self.norm_out(h).silu())
