"""Convolutional autoencoder between rain frames and the latent space."""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Protocol, Tuple, Union

import numpy as np

from src.numerics.layers import Conv2d, GroupNorm, ResBlock
from src.numerics.optim import ParamStore
from src.numerics.tensor import Tensor, as_tensor, upsample_nearest
from src.utils.config import Config
from src.utils.error_handler import ConfigError, ShapeError
from src.verification.metrics import ssim_tensor

LOGVAR_RANGE = (-30.0, 20.0)

ArrayOrTensor = Union[np.ndarray, Tensor]


@dataclass(frozen=True)
class AeConfig:
    """Architecture and loss weights of the autoencoder."""

    downsample_factor: int = 8
    latent_channels: int = 4
    base_channels: int = 16
    kl_weight: float = 1e-6
    ssim_weight: float = 1.0
    l1_weight: float = 1.0
    lpips_weight: float = 0.0
    ssim_window: int = 7
    rate_ceiling: float = 32.0
    norm_groups: int = 4

    def __post_init__(self) -> None:
        factor = self.downsample_factor
        if factor < 1 or factor & (factor - 1):
            raise ConfigError(f"downsample factor must be a power of 2, got {factor}")
        for name in ("kl_weight", "ssim_weight", "l1_weight", "lpips_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.latent_channels < 1 or self.base_channels < 1:
            raise ConfigError("latent and base channel counts must be >= 1")

    @classmethod
    def from_config(cls, cfg: Config) -> "AeConfig":
        return cls(
            downsample_factor=cfg.downsample_factor,
            latent_channels=cfg.latent_channels,
            base_channels=cfg.ae_base_channels,
            kl_weight=cfg.kl_weight,
            ssim_weight=cfg.ssim_weight,
            l1_weight=cfg.l1_weight,
            lpips_weight=cfg.lpips_weight,
            ssim_window=cfg.ssim_window,
            rate_ceiling=cfg.rate_ceiling,
            norm_groups=cfg.norm_groups,
        )

    @property
    def stages(self) -> int:
        return int(math.log2(self.downsample_factor))


@dataclass
class LatentDistribution:
    """Diagonal Gaussian posterior over latents."""

    mean: Tensor
    logvar: Tensor

    def __post_init__(self) -> None:
        if self.mean.shape != self.logvar.shape:
            raise ShapeError(f"mean {self.mean.shape} and logvar {self.logvar.shape} differ")

    def kl(self) -> Tensor:
        """``0.5 * mean(mu^2 + sigma^2 - 1 - log sigma^2)`` against N(0, I)."""
        return (self.mean * self.mean + self.logvar.exp() - 1.0 - self.logvar).mean() * 0.5


class PerceptualExtractor(Protocol):
    """Perceptual distance between two frame batches (e.g. an LPIPS network)."""

    def __call__(self, x: Tensor, x_hat: Tensor) -> Tensor:
        ...


class Encoder:
    """conv_in, then per stage a residual block and a stride-2 conv, then moments."""

    def __init__(self, store: ParamStore, cfg: AeConfig, prefix: str = "encoder") -> None:
        base, groups = cfg.base_channels, cfg.norm_groups
        self.cfg = cfg
        self.conv_in = Conv2d(store, f"{prefix}.conv_in", 1, base)
        self.blocks = [ResBlock(store, f"{prefix}.down{i}.block", base, base, groups) for i in range(cfg.stages)]
        self.downs = [
            Conv2d(store, f"{prefix}.down{i}.conv", base, base, stride=2, padding=1)
            for i in range(cfg.stages)
        ]
        self.norm_out = GroupNorm(store, f"{prefix}.norm_out", base, groups)
        self.conv_out = Conv2d(store, f"{prefix}.conv_out", base, 2 * cfg.latent_channels)

    def __call__(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        h = self.conv_in(x * (1.0 / self.cfg.rate_ceiling))
        for block, down in zip(self.blocks, self.downs):
            h = down(block(h))
        moments = self.conv_out(self.norm_out(h).silu())
        c = self.cfg.latent_channels
        return moments[:, :c], moments[:, c:].clip(*LOGVAR_RANGE)


class Decoder:
    """Mirror of the encoder with nearest upsampling and a softplus output in mm/h."""

    def __init__(
        self,
        store: ParamStore,
        cfg: AeConfig,
        prefix: str = "decoder",
        zero_init_output: bool = False,
    ) -> None:
        base, groups = cfg.base_channels, cfg.norm_groups
        self.cfg = cfg
        self.conv_in = Conv2d(store, f"{prefix}.conv_in", cfg.latent_channels, base)
        self.blocks = [ResBlock(store, f"{prefix}.up{i}.block", base, base, groups) for i in range(cfg.stages)]
        self.ups = [Conv2d(store, f"{prefix}.up{i}.conv", base, base) for i in range(cfg.stages)]
        self.norm_out = GroupNorm(store, f"{prefix}.norm_out", base, groups)
        self.conv_out = Conv2d(store, f"{prefix}.conv_out", base, 1, zero_init=zero_init_output)

    def __call__(self, z: Tensor) -> Tensor:
        if z.ndim != 4 or z.shape[1] != self.cfg.latent_channels:
            raise ShapeError(
                f"decoder expects (B, {self.cfg.latent_channels}, h, w) latents, got {z.shape}"
            )
        h = self.conv_in(z)
        for block, up in zip(self.blocks, self.ups):
            h = up(upsample_nearest(block(h), 2))
        return self.conv_out(self.norm_out(h).silu()).softplus()


class Autoencoder:
    """Encoder/decoder pair sharing one parameter store."""

    def __init__(
        self,
        cfg: AeConfig,
        store: Optional[ParamStore] = None,
        zero_init_output: bool = False,
        perceptual: Optional[PerceptualExtractor] = None,
    ) -> None:
        """Initialize the autoencoder.

        Args:
            cfg: Architecture and loss weights
            store: Parameter store (a fresh float64 store when None)
            zero_init_output: Start the decoder's final conv at zero
            perceptual: Extractor behind the LPIPS term

        Raises:
            ConfigError: If the LPIPS term is weighted but no extractor is given
        """
        if cfg.lpips_weight > 0 and perceptual is None:
            raise ConfigError("LPIPS_WEIGHT > 0 requires a perceptual feature extractor")
        self.cfg = cfg
        self.store = store if store is not None else ParamStore()
        self.encoder = Encoder(self.store, cfg)
        self.decoder = Decoder(self.store, cfg, zero_init_output=zero_init_output)
        self.perceptual = perceptual
        self.trained = False

    def _input(self, x: ArrayOrTensor) -> Tensor:
        tensor = as_tensor(x)
        if tensor.dtype != self.store.dtype:
            tensor = Tensor(tensor.data.astype(self.store.dtype))
        return tensor

    def encode(self, x: ArrayOrTensor) -> LatentDistribution:
        """Posterior over latents of a (B, 1, H, W) batch of rain rates.

        Raises:
            ShapeError: If H or W is not divisible by the downsample factor
        """
        x = self._input(x)
        factor = self.cfg.downsample_factor
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"encoder expects (B, 1, H, W) frames, got {x.shape}")
        if x.shape[2] % factor or x.shape[3] % factor:
            raise ShapeError(f"frame size {x.shape[2]}x{x.shape[3]} not divisible by factor {factor}")
        mean, logvar = self.encoder(x)
        return LatentDistribution(mean, logvar)

    def decode(self, z: ArrayOrTensor) -> Tensor:
        """Rain rates (B, 1, h*f, w*f) from latents (B, C, h, w)."""
        return self.decoder(self._input(z))

    def checksum(self) -> str:
        """Checksum of the encoder parameters only."""
        return self.store.checksum("encoder.")


def sample_latent(d: LatentDistribution, rng: np.random.Generator) -> Tensor:
    """Reparameterised draw ``mu + exp(0.5 * logvar) * eps``."""
    noise = rng.standard_normal(d.mean.shape).astype(d.mean.dtype)
    return d.mean + (d.logvar * 0.5).exp() * noise


def masked_l1(x: Tensor, x_hat: Tensor, valid: np.ndarray) -> Tensor:
    """Mean absolute error over valid pixels."""
    mask = valid.astype(x.dtype).reshape(x.shape)
    count = max(float(mask.sum()), 1.0)
    return ((x - x_hat).abs() * mask).sum() * (1.0 / count)


def ae_loss(
    x: ArrayOrTensor,
    x_hat: Tensor,
    d: LatentDistribution,
    cfg: AeConfig,
    valid: Optional[np.ndarray] = None,
    perceptual: Optional[PerceptualExtractor] = None,
) -> Tuple[Tensor, Dict[str, float]]:
    """Composite autoencoder loss.

    ``ssim_weight * (1 - SSIM) + kl_weight * KL + l1_weight * L1 + lpips_weight * LPIPS``
    with SSIM on rates scaled by the rate ceiling. Invalid pixels never reach
    the SSIM or L1 terms.

    Returns:
        (loss, per-term values keyed ssim/kl/l1 and lpips when enabled)
    """
    x = as_tensor(x, dtype=x_hat.dtype)
    if x.shape != x_hat.shape:
        raise ShapeError(f"target {x.shape} and reconstruction {x_hat.shape} differ")
    if valid is None:
        valid = np.ones(x.shape, dtype=bool)
    scale = 1.0 / cfg.rate_ceiling
    ssim_value = ssim_tensor(x * scale, x_hat * scale, valid, cfg.ssim_window, 1.0)
    ssim_term = 1.0 - ssim_value
    kl_term = d.kl()
    l1_term = masked_l1(x, x_hat, valid)
    loss = ssim_term * cfg.ssim_weight + kl_term * cfg.kl_weight + l1_term * cfg.l1_weight
    terms = {"ssim": ssim_term.item(), "kl": kl_term.item(), "l1": l1_term.item()}
    if cfg.lpips_weight > 0:
        if perceptual is None:
            raise ConfigError("LPIPS_WEIGHT > 0 requires a perceptual feature extractor")
        lpips_term = perceptual(x, x_hat)
        loss = loss + lpips_term * cfg.lpips_weight
        terms["lpips"] = lpips_term.item()
    return loss, terms
