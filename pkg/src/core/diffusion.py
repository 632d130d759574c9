"""Gaussian diffusion in latent space: schedule, forward process, loss, sampler.

Steps are 1-based here (t in [1, T_max]); the noise predictor receives the
0-based index ``t - 1``.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from src.core.conditioning import ConditionBundle, concat_with_noise
from src.core.denoiser import NoisePredictor
from src.numerics.tensor import Tensor, as_tensor, no_grad
from src.utils.error_handler import ConfigError, GridRangeError, ShapeError
from src.utils.logger import logger

SCHEDULES = ("linear",)


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances and their cumulative products (index 0 is step 1)."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def t_max(self) -> int:
        return int(self.betas.shape[0])

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.t_max:
            raise GridRangeError(f"diffusion step {t} outside [1, {self.t_max}]")

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product up to ``t``; 1 at t = 0."""
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.alpha_bars[t - 1])


def make_schedule(
    kind: str = "linear", t_max: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    """Build a noise schedule.

    Raises:
        ConfigError: On an unknown kind, ``t_max < 1`` or a beta range outside
            ``0 < beta_start <= beta_end < 1``
    """
    if kind not in SCHEDULES:
        raise ConfigError(f"unknown noise schedule {kind!r}; expected one of {SCHEDULES}")
    if t_max < 1:
        raise ConfigError(f"T_MAX must be >= 1, got {t_max}")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError(f"invalid beta range [{beta_start}, {beta_end}]")
    betas = np.linspace(beta_start, beta_end, t_max, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas, alphas, np.cumprod(alphas))


def forward_diffuse(
    z0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """Closed-form noising ``sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps``.

    Raises:
        ShapeError: If ``eps`` and ``z0`` differ in shape
        GridRangeError: If ``t`` is outside [1, T_max]
    """
    z0 = np.asarray(z0)
    eps = np.asarray(eps)
    if z0.shape != eps.shape:
        raise ShapeError(f"noise shape {eps.shape} differs from latent shape {z0.shape}")
    sched._check(t)
    alpha_bar = sched.alpha_bar(t)
    dtype = z0.dtype if np.issubdtype(z0.dtype, np.floating) else np.float64
    return (np.sqrt(alpha_bar) * z0 + np.sqrt(1.0 - alpha_bar) * eps).astype(dtype, copy=False)


def draw_timestep(rng: np.random.Generator, t_max: int) -> int:
    """Uniform step in [1, T_max]."""
    return int(rng.integers(1, t_max + 1))


def training_loss(
    z0: np.ndarray,
    cond: ConditionBundle,
    rng: np.random.Generator,
    sched: NoiseSchedule,
    predictor: NoisePredictor,
) -> Tensor:
    """Noise-prediction MSE at one uniformly drawn step.

    Draws ``t`` then ``eps ~ N(0, I)`` from ``rng``, noises ``z0`` and scores
    the predictor on ``[z_t | conditions]``.
    """
    t = draw_timestep(rng, sched.t_max)
    eps = rng.standard_normal(z0.shape).astype(z0.dtype)
    zt = forward_diffuse(z0, t, eps, sched)
    predicted = predictor.predict_noise(concat_with_noise(Tensor(zt), cond), t - 1)
    residual = predicted - eps
    return (residual * residual).mean()


def reverse_step(
    zt: np.ndarray,
    t: int,
    cond: ConditionBundle,
    rng: Optional[np.random.Generator],
    sched: NoiseSchedule,
    predictor: NoisePredictor,
    last_step: bool = False,
) -> np.ndarray:
    """One ancestral step ``z_t -> z_{t-1}``.

    Mean ``(z_t - beta_t / sqrt(1 - abar_t) * eps_theta) / sqrt(alpha_t)``; unless
    ``last_step``, noise with variance ``beta_t`` is added.
    """
    sched._check(t)
    beta, alpha, alpha_bar = sched.beta(t), sched.alpha(t), sched.alpha_bar(t)
    with no_grad():
        eps_theta = predictor.predict_noise(concat_with_noise(Tensor(zt), cond), t - 1).data
    mean = (zt - beta / np.sqrt(1.0 - alpha_bar) * eps_theta) / np.sqrt(alpha)
    if last_step:
        return mean.astype(zt.dtype, copy=False)
    if rng is None:
        raise ConfigError("a random stream is required for non-final reverse steps")
    noise = rng.standard_normal(zt.shape)
    return (mean + np.sqrt(beta) * noise).astype(zt.dtype, copy=False)


def member_rng(seed: int, member: int) -> np.random.Generator:
    """Private stream of one ensemble member, fixed by (master seed, member index)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(member,)))


def sample(
    cond: ConditionBundle,
    sched: NoiseSchedule,
    predictor: NoisePredictor,
    seed: int,
    members: int = 1,
    dtype: type = np.float64,
) -> np.ndarray:
    """Ancestral sampling of an ensemble.

    Every member starts from its own ``z_T ~ N(0, I)`` and walks ``t = T_max .. 1``
    with its own stream; all members share the condition.

    Returns:
        (S, N, C_z, h, w) final latents
    """
    if members < 1:
        raise ConfigError(f"ensemble size must be >= 1, got {members}")
    frames = cond.steps
    height, width = cond.latent_condition.shape[2:]
    shape = (frames, predictor.out_channels, height, width)
    cond = ConditionBundle(
        as_tensor(cond.latent_condition.data.astype(dtype)), as_tensor(cond.pixel_condition.data.astype(dtype))
    )
    results: List[np.ndarray] = []
    for member in range(members):
        rng = member_rng(seed, member)
        z = rng.standard_normal(shape).astype(dtype)
        for t in range(sched.t_max, 0, -1):
            z = reverse_step(z, t, cond, rng, sched, predictor, last_step=(t == 1))
        results.append(z)
        logger.debug(f"Sampled ensemble member {member + 1}/{members}")
    return np.stack(results)
