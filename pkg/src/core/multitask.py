"""Per-band decoder bank over one shared latent forecast.

Band decoders D_0..D_n and the overall decoder D_a all read the latent of the
full frame. Band k learns the band-k sub-image, D_a the whole frame; the
band outputs summed in order form the recomposed forecast.
"""

import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.autoencoder import AeConfig, Autoencoder, Decoder, masked_l1
from src.core.bands import ThresholdSpec, band_mask
from src.core.conditioning import ConditionBundle, PixelConditionEncoder, build_conditions
from src.core.denoiser import NoisePredictor
from src.core.diffusion import NoiseSchedule, sample
from src.core.grid import ForecastEnsemble, RadarSequence, RainField
from src.core.training import StepHook, TrainLoop, TrainSettings
from src.numerics.optim import ParamStore
from src.numerics.tensor import Tensor, no_grad
from src.utils.error_handler import ShapeError, UsageError
from src.utils.logger import logger
from src.verification.metrics import ssim_tensor

OVERALL = "overall"
SYSTEMS = ("mtldm", "oa")


def band_name(k: int) -> str:
    return f"band{k}"


@dataclass
class BankDecoder:
    """One decoder of the bank with its own parameter store."""

    name: str
    role: str
    interval: Tuple[float, float]
    store: ParamStore
    decoder: Decoder

    def __call__(self, z: Tensor) -> Tensor:
        return self.decoder(z)


@dataclass
class DecoderBank:
    """Band decoders in band order plus the overall decoder."""

    spec: ThresholdSpec
    decoders: Dict[str, BankDecoder] = field(default_factory=dict)

    @classmethod
    def build(cls, spec: ThresholdSpec, cfg: AeConfig, dtype: type = np.float64, seed: int = 0) -> "DecoderBank":
        """Fresh bank: one band decoder per interval and one overall decoder."""
        bank = cls(spec)
        for k, interval in enumerate(spec.intervals()):
            bank.add(band_name(k), "band", interval, cfg, dtype, seed)
        bank.add(OVERALL, OVERALL, (0.0, float("inf")), cfg, dtype, seed)
        return bank

    def add(
        self, name: str, role: str, interval: Tuple[float, float], cfg: AeConfig, dtype: type, seed: int
    ) -> BankDecoder:
        store = ParamStore(dtype=dtype, seed=seed)
        entry = BankDecoder(name, role, interval, store, Decoder(store, cfg))
        self.decoders[name] = entry
        return entry

    def band_names(self) -> List[str]:
        """Names of the band decoders present, in band order."""
        return [band_name(k) for k in range(self.spec.band_count) if band_name(k) in self.decoders]

    def init_from(self, autoencoder: Autoencoder) -> None:
        """Start every decoder from the trained autoencoder decoder."""
        for entry in self.decoders.values():
            entry.store.copy_from(autoencoder.store, "decoder.", "decoder.")

    def manifest_lines(self) -> List[str]:
        """``name role [lo,hi)`` per decoder."""
        return [f"{e.name} {e.role} [{e.interval[0]:g},{e.interval[1]:g})" for e in self.decoders.values()]

    def __len__(self) -> int:
        return len(self.decoders)


@dataclass
class MultiForecast:
    """Decoded ensembles: one (S, N, H, W) array per decoder plus the recomposition."""

    bands: Dict[str, np.ndarray]
    overall: np.ndarray
    recomposed: np.ndarray
    step_minutes: int = 5

    def __post_init__(self) -> None:
        shapes = {a.shape for a in list(self.bands.values()) + [self.overall, self.recomposed]}
        if len(shapes) != 1:
            raise ShapeError(f"forecast arrays disagree in shape: {sorted(shapes)}")

    @property
    def members(self) -> int:
        return int(self.overall.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.overall.shape[1])

    def lead_minutes(self) -> List[int]:
        return [self.step_minutes * (i + 1) for i in range(self.horizon)]

    def system(self, name: str) -> np.ndarray:
        """``mtldm`` (recomposed), ``oa`` (overall) or a band decoder name."""
        if name == "mtldm":
            return self.recomposed
        if name == "oa":
            return self.overall
        return self.bands[name]

    def to_ensemble(self, name: str = "mtldm") -> ForecastEnsemble:
        data = self.system(name)
        return ForecastEnsemble(
            [RadarSequence.from_arrays(member, step_minutes=self.step_minutes) for member in data],
            system=name,
        )


def _band_targets(frames: np.ndarray, valid: np.ndarray, interval: Tuple[float, float]) -> np.ndarray:
    """Absolute band-k rates, zero outside the band."""
    lo, hi = interval
    targets = np.empty_like(frames)
    for i in range(frames.shape[0]):
        field_ = RainField(frames[i, 0], valid[i, 0])
        targets[i, 0] = np.where(band_mask(field_, lo, hi), field_.rate, 0.0)
    return targets


def decoder_loss(
    target: np.ndarray, output: Tensor, valid: np.ndarray, cfg: AeConfig, ssim_weight: float
) -> Tuple[Tensor, Dict[str, float]]:
    """Masked L1 plus ``ssim_weight * (1 - SSIM)``."""
    target_t = Tensor(target.astype(output.dtype))
    l1 = masked_l1(target_t, output, valid)
    scale = 1.0 / cfg.rate_ceiling
    ssim_term = 1.0 - ssim_tensor(target_t * scale, output * scale, valid, cfg.ssim_window, 1.0)
    return l1 + ssim_term * ssim_weight, {"l1": l1.item(), "ssim": ssim_term.item()}


def train_decoder_bank(
    frames: np.ndarray,
    valid: np.ndarray,
    autoencoder: Autoencoder,
    spec: ThresholdSpec,
    settings: TrainSettings,
    ssim_weight: float = 0.2,
    bank: Optional[DecoderBank] = None,
    on_step: Optional[StepHook] = None,
) -> DecoderBank:
    """Train every bank decoder on encoder means of full frames.

    The encoder runs without gradient recording and its store is frozen; only
    the decoders' own stores are updated.

    Args:
        frames: (B, 1, H, W) full-frame rain rates
        valid: (B, 1, H, W) validity masks
        autoencoder: Trained autoencoder
        spec: Thresholds defining the bands
        settings: Optimiser settings and step count
        ssim_weight: Weight of the SSIM term
        bank: Bank to continue training (fresh and initialised from the AE decoder when None)
        on_step: Per-step hook passed to each decoder's training loop

    Raises:
        UsageError: If the autoencoder has not been trained
    """
    if not autoencoder.trained:
        raise UsageError("decoder bank training needs a trained autoencoder")
    autoencoder.store.freeze()
    before = autoencoder.checksum()
    frames = frames.astype(autoencoder.store.dtype)
    with no_grad():
        latents = autoencoder.encode(frames).mean.data
    if bank is None:
        bank = DecoderBank.build(spec, autoencoder.cfg, autoencoder.store.dtype, settings.seed)
        bank.init_from(autoencoder)

    for entry in bank.decoders.values():
        targets = frames if entry.role == OVERALL else _band_targets(frames, valid, entry.interval)
        rng = np.random.default_rng([settings.seed, zlib.crc32(entry.name.encode("utf-8"))])

        def step(_: int, entry: BankDecoder = entry, targets: np.ndarray = targets, rng: np.random.Generator = rng):
            batch = rng.choice(latents.shape[0], size=min(settings.batch_size, latents.shape[0]), replace=False)
            output = entry(Tensor(latents[batch]))
            return decoder_loss(targets[batch], output, valid[batch], autoencoder.cfg, ssim_weight)

        logger.info(f"Training decoder {entry.name} ({entry.role})")
        TrainLoop(entry.store, settings, label=entry.name, on_step=on_step).run(step)

    if autoencoder.checksum() != before:
        raise UsageError("encoder parameters changed during decoder bank training")
    return bank


def decode_multitask(z: np.ndarray, bank: DecoderBank, step_minutes: int = 5, chunk: int = 16) -> MultiForecast:
    """Apply every decoder to the same (S, N, C, h, w) latents.

    The recomposed forecast is the band outputs summed in band order.
    """
    if z.ndim != 5:
        raise ShapeError(f"expected (S, N, C, h, w) latents, got {z.shape}")
    members, frames = z.shape[:2]
    flat = z.reshape((members * frames,) + z.shape[2:])
    outputs: Dict[str, np.ndarray] = {}
    with no_grad():
        for name, entry in bank.decoders.items():
            parts = [entry(Tensor(flat[i : i + chunk].astype(entry.store.dtype))).data for i in range(0, len(flat), chunk)]
            decoded = np.concatenate(parts)[:, 0]
            outputs[name] = decoded.reshape((members, frames) + decoded.shape[1:])
    bands = {name: outputs[name] for name in bank.band_names()}
    recomposed = np.zeros_like(outputs[OVERALL]) if OVERALL in outputs else np.zeros_like(next(iter(bands.values())))
    for name in bank.band_names():
        recomposed = recomposed + bands[name]
    overall = outputs.get(OVERALL, recomposed)
    return MultiForecast(bands, overall, recomposed, step_minutes)


def predict(
    context: RadarSequence,
    autoencoder: Autoencoder,
    pixel_encoder: PixelConditionEncoder,
    predictor: NoisePredictor,
    bank: DecoderBank,
    sched: NoiseSchedule,
    members: int = 1,
    seed: int = 0,
    horizon: int = 16,
    latent_scale: float = 1.0,
) -> MultiForecast:
    """Full forecast: conditions, ensemble sampling in latent space, decoder bank.

    Args:
        context: The M most recent frames
        autoencoder: Trained autoencoder (its encoder builds the latent condition)
        pixel_encoder: Pixel-space condition branch
        predictor: Noise predictor
        bank: Decoder bank
        sched: Noise schedule
        members: Ensemble size S
        seed: Master seed of the member streams
        horizon: Predicted frames N
        latent_scale: Multiplier that brings latents to unit variance

    Returns:
        Forecast with cadence taken from the context
    """
    dtype = autoencoder.store.dtype
    frames, _ = context.as_batch(dtype)
    with no_grad():
        cond = build_conditions(frames, autoencoder, pixel_encoder, horizon)
        cond = scale_condition(cond, latent_scale)
    z = sample(cond, sched, predictor, seed, members, dtype) / latent_scale
    logger.info(f"Sampled {members} member(s) x {horizon} latent frames")
    return decode_multitask(z.astype(dtype), bank, context.step_minutes)


def scale_condition(cond: ConditionBundle, latent_scale: float) -> ConditionBundle:
    """Bring the latent branch of a condition to the diffusion's latent scale."""
    return ConditionBundle(cond.latent_condition * latent_scale, cond.pixel_condition)


def forecast_sequences(forecast: MultiForecast, names: Sequence[str]) -> Dict[str, List[RadarSequence]]:
    """Per-member radar sequences of selected systems."""
    return {name: list(forecast.to_ensemble(name).members) for name in names}
