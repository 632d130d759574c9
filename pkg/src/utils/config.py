"""Configuration management module."""

import math
import os
from pathlib import Path
from typing import Dict, Mapping, Optional, Set, Tuple

import numpy as np
from dotenv import dotenv_values, load_dotenv

from src.utils.error_handler import ConfigError

# Load environment variables from .env file
load_dotenv()

CSI_MODES = ("member-mean", "single-member", "ensemble-mean")
PRECISIONS = {"float32": np.float32, "float64": np.float64}


class Config:
    """Run configuration.

    Every attribute is read from an UPPER_SNAKE key. Values come either from the
    process environment (the default instance) or from a KEY=VALUE file, in which
    case unknown keys are rejected.
    """

    def __init__(self, values: Optional[Mapping[str, Optional[str]]] = None) -> None:
        """Initialize configuration.

        Args:
            values: Explicit key/value mapping; the environment is used when None
        """
        self._values: Mapping[str, Optional[str]] = values if values is not None else os.environ
        self._seen: Set[str] = set()

        # 数据
        self.image_size: int = self._int("IMAGE_SIZE", 64)
        self.step_minutes: int = self._int("STEP_MINUTES", 5)
        self.context_frames: int = self._int("CONTEXT_FRAMES", 4)
        self.horizon_frames: int = self._int("HORIZON_FRAMES", 16)
        self.data_dir: Path = Path(self._str("DATA_DIR", "data"))

        # 自编码器
        self.downsample_factor: int = self._int("DOWNSAMPLE_FACTOR", 8)
        self.latent_channels: int = self._int("LATENT_CHANNELS", 4)
        self.ae_base_channels: int = self._int("AE_BASE_CHANNELS", 16)
        self.kl_weight: float = self._float("KL_WEIGHT", 1e-6)
        self.ssim_weight: float = self._float("SSIM_WEIGHT", 1.0)
        self.l1_weight: float = self._float("L1_WEIGHT", 1.0)
        self.lpips_weight: float = self._float("LPIPS_WEIGHT", 0.0)
        self.ssim_window: int = self._int("SSIM_WINDOW", 7)
        self.rate_ceiling: float = self._float("RATE_CEILING", 32.0)

        # 条件网络与去噪网络
        self.pixel_condition_channels: int = self._int("PIXEL_CONDITION_CHANNELS", 12)
        self.denoiser_channels: int = self._int("DENOISER_CHANNELS", 32)
        self.denoiser_depth: int = self._int("DENOISER_DEPTH", 2)
        self.temporal_kernel: int = self._int("TEMPORAL_KERNEL", 3)
        self.spatial_kernel: int = self._int("SPATIAL_KERNEL", 3)
        self.norm_groups: int = self._int("NORM_GROUPS", 4)
        self.embed_dim: int = self._int("EMBED_DIM", 32)

        # 扩散过程
        self.schedule: str = self._str("SCHEDULE", "linear")
        self.t_max: int = self._int("T_MAX", 1000)
        self.beta_start: float = self._float("BETA_START", 1e-4)
        self.beta_end: float = self._float("BETA_END", 0.02)

        # 优化
        self.lr: float = self._float("LR", 1e-4)
        self.adam_beta1: float = self._float("ADAM_BETA1", 0.9)
        self.adam_beta2: float = self._float("ADAM_BETA2", 0.999)
        self.adam_eps: float = self._float("ADAM_EPS", 1e-8)
        self.ema_decay: float = self._float("EMA_DECAY", 0.998)
        self.ema_every: int = self._int("EMA_EVERY", 10)
        self.ae_steps: int = self._int("AE_STEPS", 2000)
        self.diffusion_steps: int = self._int("DIFFUSION_STEPS", 20000)
        self.decoder_steps: int = self._int("DECODER_STEPS", 1000)
        self.batch_size: int = self._int("BATCH_SIZE", 4)
        self.decoder_ssim_weight: float = self._float("DECODER_SSIM_WEIGHT", 0.2)

        # 评估
        self.thresholds: Tuple[float, ...] = self._floats("THRESHOLDS", (1.0, 4.0, 8.0))
        self.pooling_scales: Tuple[int, ...] = tuple(
            int(v) for v in self._floats("POOLING_SCALES", (1.0, 4.0, 16.0))
        )
        self.ensemble_size: int = self._int("ENSEMBLE_SIZE", 4)
        self.csi_mode: str = self._str("CSI_MODE", "member-mean")

        # 运行
        self.seed: int = self._int("SEED", 0)
        self.precision: str = self._str("PRECISION", "float32")
        self.checkpoint_dir: Path = Path(self._str("CHECKPOINT_DIR", "checkpoints"))

        # 日志配置
        self.log_level: str = self._str("LOG_LEVEL", "INFO")
        self.log_file: Optional[str] = self._str("LOG_FILE", "") or None

    @classmethod
    def from_file(cls, path: Path) -> "Config":
        """Load configuration from a UTF-8 KEY=VALUE file.

        Args:
            path: Configuration file path

        Returns:
            Validated configuration

        Raises:
            ConfigError: If the file is missing, holds unknown keys or invalid values
        """
        if not Path(path).is_file():
            raise ConfigError(f"configuration file not found: {path}")
        values = dotenv_values(path, encoding="utf-8")
        cfg = cls(values)
        unknown = sorted(set(values) - cfg._seen)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        cfg.validate()
        return cfg

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "Config":
        """Build a validated configuration from Python values (used by tests and scripts).

        Args:
            values: Key/value mapping; values are converted with ``str``

        Returns:
            Validated configuration
        """
        as_text: Dict[str, Optional[str]] = {}
        for key, value in values.items():
            if isinstance(value, (tuple, list)):
                as_text[key] = ",".join(str(v) for v in value)
            else:
                as_text[key] = str(value)
        cfg = cls(as_text)
        unknown = sorted(set(as_text) - cfg._seen)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        cfg.validate()
        return cfg

    @property
    def dtype(self) -> type:
        """Numpy float type selected by PRECISION."""
        return PRECISIONS[self.precision]

    @property
    def latent_size(self) -> int:
        """Latent grid edge length."""
        return self.image_size // self.downsample_factor

    def validate(self) -> bool:
        """Validate configuration settings."""
        factor = self.downsample_factor
        if factor < 1 or factor & (factor - 1):
            raise ConfigError(f"DOWNSAMPLE_FACTOR must be a power of 2, got {factor}")
        if self.image_size % factor:
            raise ConfigError(
                f"IMAGE_SIZE {self.image_size} is not divisible by DOWNSAMPLE_FACTOR {factor}"
            )
        for name in ("kl_weight", "ssim_weight", "l1_weight", "lpips_weight", "decoder_ssim_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name.upper()} must be >= 0")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ConfigError("beta range must satisfy 0 < BETA_START <= BETA_END < 1")
        if self.t_max < 1:
            raise ConfigError("T_MAX must be >= 1")
        if not 0 < self.ema_decay < 1:
            raise ConfigError("EMA_DECAY must lie in (0, 1)")
        if self.ema_every < 1:
            raise ConfigError("EMA_EVERY must be >= 1")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"PRECISION must be one of {sorted(PRECISIONS)}")
        if self.csi_mode not in CSI_MODES:
            raise ConfigError(f"CSI_MODE must be one of {CSI_MODES}")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ConfigError("SSIM_WINDOW must be a positive odd integer")
        for key in ("TEMPORAL_KERNEL", "SPATIAL_KERNEL"):
            kernel = getattr(self, key.lower())
            if kernel < 1 or kernel % 2 == 0:
                raise ConfigError(f"{key} must be a positive odd integer, got {kernel}")
        if self.rate_ceiling <= 0:
            raise ConfigError("RATE_CEILING must be > 0")
        if any(not math.isfinite(t) or t <= 0 for t in self.thresholds) or any(
            b <= a for a, b in zip(self.thresholds, self.thresholds[1:])
        ):
            raise ConfigError("THRESHOLDS must be positive and strictly increasing")
        if self.ensemble_size < 1:
            raise ConfigError("ENSEMBLE_SIZE must be >= 1")
        return True

    def _raw(self, key: str) -> Optional[str]:
        self._seen.add(key)
        value = self._values.get(key)
        if value is None or str(value).strip() == "":
            return None
        return str(value).strip()

    def _str(self, key: str, default: str) -> str:
        value = self._raw(key)
        return default if value is None else value

    def _int(self, key: str, default: int) -> int:
        value = self._raw(key)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError as e:
            raise ConfigError(f"{key} must be an integer, got {value!r}", original_error=e)

    def _float(self, key: str, default: float) -> float:
        value = self._raw(key)
        if value is None:
            return default
        try:
            return float(value)
        except ValueError as e:
            raise ConfigError(f"{key} must be a number, got {value!r}", original_error=e)

    def _floats(self, key: str, default: Tuple[float, ...]) -> Tuple[float, ...]:
        value = self._raw(key)
        if value is None:
            return default
        try:
            return tuple(float(v) for v in value.split(",") if v.strip())
        except ValueError as e:
            raise ConfigError(f"{key} must be a comma-separated list, got {value!r}", original_error=e)


# Global configuration instance
config = Config()
