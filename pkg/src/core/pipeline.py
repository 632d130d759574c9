"""Stage orchestrator: three-stage training, sampling, evaluation and benchmark."""

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from tenacity import (
    before_sleep_log,
    retry,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from src.core.autoencoder import AeConfig, Autoencoder, ae_loss, sample_latent
from src.core.bands import ThresholdSpec
from src.core.conditioning import (
    ConditionBundle,
    PixelConditionEncoder,
    build_latent_condition,
    build_pixel_condition,
)
from src.core.denoiser import Denoiser, DenoiserConfig
from src.core.diffusion import NoiseSchedule, make_schedule, training_loss
from src.core.grid import RadarSequence
from src.core.multitask import DecoderBank, MultiForecast, predict, train_decoder_bank
from src.core.training import StepHook, TrainLoop, TrainSettings
from src.data.export import read_forecast, read_manifest, write_manifest
from src.data.rgrd import read_rgrd
from src.data.synth import SampleWindow, generate, random_spec, window
from src.numerics.checkpoint import load_into, save_checkpoint
from src.numerics.optim import ParamStore
from src.numerics.tensor import Tensor, no_grad
from src.utils.config import Config, config
from src.utils.error_handler import ContractError, LoadError, LockError, MissingStageError, UsageError
from src.utils.logger import logger
from src.verification import metrics
from src.verification.evaluate import MetricSeries, evaluate_forecast, write_metrics_csv

LATENT_SCALE = "latent_scale"


class CheckpointLock:
    """Advisory lock file guarding a checkpoint directory."""

    def __init__(self, directory: Path, attempts: int = 5, max_wait: float = 4.0) -> None:
        self.path = Path(directory) / ".lock"
        self.attempts = attempts
        self.max_wait = max_wait
        self._held = False

    def _holder_alive(self) -> bool:
        """Whether the PID recorded in the lock file still runs (unreadable files count as held)."""
        try:
            pid = int(self.path.read_text(encoding="utf-8").strip())
        except (OSError, ValueError):
            return True
        if pid <= 0:
            return True
        try:
            os.kill(pid, 0)
        except (ProcessLookupError, OverflowError):
            return False
        except PermissionError:
            return True
        return True

    def _try_acquire(self, reclaim: bool = True) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as e:
            if reclaim and not self._holder_alive():
                logger.warning(f"Reclaiming stale lock {self.path} left by a finished process")
                self.path.unlink(missing_ok=True)
                return self._try_acquire(reclaim=False)
            raise LockError(f"{self.path} is held by another command", original_error=e)
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(f"{os.getpid()}\n")
        self._held = True

    def acquire(self) -> "CheckpointLock":
        """Create the lock file, retrying with exponential backoff.

        Raises:
            LockError: If the lock is still held after every attempt
        """

        @retry(
            stop=stop_after_attempt(self.attempts),
            wait=wait_exponential(multiplier=0.25, min=0.25, max=self.max_wait),
            retry=retry_if_exception_type(LockError),
            before_sleep=before_sleep_log(logger, logger.level),
            reraise=True,
        )
        def _attempt() -> None:
            self._try_acquire()

        _attempt()
        return self

    def release(self) -> None:
        if self._held:
            self.path.unlink(missing_ok=True)
            self._held = False

    def __enter__(self) -> "CheckpointLock":
        return self.acquire()

    def __exit__(self, *exc: object) -> None:
        self.release()


@dataclass
class DiffusionModel:
    """Pixel condition encoder, denoiser and latent scale in one store."""

    store: ParamStore
    pixel_encoder: PixelConditionEncoder
    denoiser: Denoiser
    schedule: NoiseSchedule

    @property
    def latent_scale(self) -> float:
        return float(self.store[LATENT_SCALE].data[0])


@dataclass
class BenchmarkReport:
    """Paired scores over held-out windows."""

    windows: int
    csi_mtldm: float
    csi_oa: float
    crps_trained: float
    crps_untrained: float

    @property
    def csi_gain(self) -> float:
        """Relative top-band CSI improvement of the recomposed forecast over the overall decoder."""
        return metrics.relative_improvement(self.csi_mtldm, self.csi_oa)

    @property
    def crps_gain(self) -> float:
        """Relative CRPS reduction of the trained sampler against the untrained one."""
        return -metrics.relative_improvement(self.crps_trained, self.crps_untrained)


class NowcastPipeline:
    """Runs every stage from one configuration.

    Checkpoints live in ``CHECKPOINT_DIR``: ``ae.ckpt``, ``denoiser.ckpt``,
    ``bank/<name>.ckpt`` and ``manifest.txt``.
    """

    def __init__(self, cfg: Optional[Config] = None, on_step: Optional[StepHook] = None) -> None:
        self.cfg = cfg if cfg is not None else config
        self.on_step = on_step
        self.spec = ThresholdSpec(self.cfg.thresholds)
        self.ae_cfg = AeConfig.from_config(self.cfg)
        self.dtype = self.cfg.dtype

    # 路径
    @property
    def ae_path(self) -> Path:
        return self.cfg.checkpoint_dir / "ae.ckpt"

    @property
    def denoiser_path(self) -> Path:
        return self.cfg.checkpoint_dir / "denoiser.ckpt"

    @property
    def bank_dir(self) -> Path:
        return self.cfg.checkpoint_dir / "bank"

    @property
    def manifest_path(self) -> Path:
        return self.cfg.checkpoint_dir / "manifest.txt"

    def lock(self) -> CheckpointLock:
        return CheckpointLock(self.cfg.checkpoint_dir)

    def settings(self, steps: int, use_ema: bool = False) -> TrainSettings:
        return TrainSettings.from_config(self.cfg, steps, use_ema)

    # 数据
    def load_dataset(self, data_dir: Optional[Path] = None) -> List[RadarSequence]:
        """Read every RGRD sequence in the data directory, sorted by name.

        Raises:
            MissingStageError: If the directory holds no RGRD file
        """
        data_dir = Path(data_dir) if data_dir is not None else self.cfg.data_dir
        paths = sorted(data_dir.glob("*.rgrd")) if data_dir.is_dir() else []
        if not paths:
            raise MissingStageError(str(data_dir / "*.rgrd"))
        sequences = [read_rgrd(path) for path in paths]
        logger.info(f"Loaded {len(sequences)} sequences from {data_dir}")
        return sequences

    def training_frames(self, sequences: List[RadarSequence]) -> Tuple[np.ndarray, np.ndarray]:
        """All frames as (B, 1, H, W) rates and masks."""
        batches = [seq.as_batch(self.dtype) for seq in sequences]
        return np.concatenate([b[0] for b in batches]), np.concatenate([b[1] for b in batches])

    def training_windows(self, sequences: List[RadarSequence]) -> List[SampleWindow]:
        """(context, target) windows cut from every sequence long enough."""
        span = self.cfg.context_frames + self.cfg.horizon_frames
        windows: List[SampleWindow] = []
        for seq in sequences:
            if len(seq) >= span:
                windows.extend(window(seq, 1, self.cfg.context_frames, self.cfg.horizon_frames))
        if not windows:
            raise ContractError(f"no sequence holds the {span} frames a diffusion window needs")
        return windows

    # 模型构建
    def build_autoencoder(self) -> Autoencoder:
        return Autoencoder(self.ae_cfg, ParamStore(self.dtype, self.cfg.seed))

    def build_diffusion(self) -> DiffusionModel:
        cfg = self.cfg
        store = ParamStore(self.dtype, cfg.seed)
        pixel_encoder = PixelConditionEncoder(
            store,
            context_frames=cfg.context_frames,
            out_channels=cfg.pixel_condition_channels,
            downsample_factor=cfg.downsample_factor,
            groups=cfg.norm_groups,
            rate_ceiling=cfg.rate_ceiling,
        )
        in_channels = cfg.latent_channels * (1 + cfg.context_frames) + cfg.pixel_condition_channels
        denoiser = Denoiser(store, DenoiserConfig.from_config(cfg, in_channels))
        store.add(LATENT_SCALE, np.ones(1), trainable=False)
        schedule = make_schedule(cfg.schedule, cfg.t_max, cfg.beta_start, cfg.beta_end)
        return DiffusionModel(store, pixel_encoder, denoiser, schedule)

    def build_bank(self) -> DecoderBank:
        return DecoderBank.build(self.spec, self.ae_cfg, self.dtype, self.cfg.seed)

    # 加载
    def load_autoencoder(self) -> Autoencoder:
        """Trained autoencoder from ``ae.ckpt``.

        Raises:
            MissingStageError: If the checkpoint does not exist
        """
        if not self.ae_path.is_file():
            raise MissingStageError(str(self.ae_path))
        autoencoder = self.build_autoencoder()
        load_into(autoencoder.store, self.ae_path)
        autoencoder.trained = True
        return autoencoder

    def load_diffusion(self) -> DiffusionModel:
        if not self.denoiser_path.is_file():
            raise MissingStageError(str(self.denoiser_path))
        model = self.build_diffusion()
        load_into(model.store, self.denoiser_path)
        return model

    def load_bank(self) -> DecoderBank:
        """Decoder bank from ``manifest.txt`` and ``bank/<name>.ckpt``.

        Raises:
            MissingStageError: If the manifest or a decoder checkpoint is missing
            LoadError: If the manifest disagrees with the configured thresholds
        """
        if not self.manifest_path.is_file():
            raise MissingStageError(str(self.manifest_path))
        bank = self.build_bank()
        recorded = read_manifest(self.manifest_path)
        if recorded != bank.manifest_lines():
            raise LoadError(f"{self.manifest_path} does not match THRESHOLDS {self.cfg.thresholds}")
        for name, entry in bank.decoders.items():
            path = self.bank_dir / f"{name}.ckpt"
            if not path.is_file():
                raise MissingStageError(str(path))
            load_into(entry.store, path)
        return bank

    # 训练
    def train_autoencoder(self, sequences: List[RadarSequence]) -> Autoencoder:
        """Stage 1: fit the autoencoder on single frames and save ``ae.ckpt``."""
        frames, valid = self.training_frames(sequences)
        autoencoder = self.build_autoencoder()
        settings = self.settings(self.cfg.ae_steps)
        rng = np.random.default_rng([self.cfg.seed, 1])

        def step(_: int) -> Tuple[Tensor, Dict[str, float]]:
            batch = rng.choice(len(frames), size=min(settings.batch_size, len(frames)), replace=False)
            posterior = autoencoder.encode(frames[batch])
            x_hat = autoencoder.decode(sample_latent(posterior, rng))
            return ae_loss(frames[batch], x_hat, posterior, self.ae_cfg, valid[batch], autoencoder.perceptual)

        with self.lock():
            TrainLoop(autoencoder.store, settings, label="ae", on_step=self.on_step).run(step)
            autoencoder.trained = True
            save_checkpoint(autoencoder.store, self.ae_path)
        logger.info(f"Autoencoder saved to {self.ae_path}")
        return autoencoder

    def estimate_latent_scale(self, autoencoder: Autoencoder, windows: List[SampleWindow], limit: int = 32) -> float:
        """``1 / std`` of encoder means over target frames of up to ``limit`` windows."""
        with no_grad():
            latents = [
                autoencoder.encode(w.target.as_batch(self.dtype)[0]).mean.data for w in windows[:limit]
            ]
        std = float(np.std(np.concatenate(latents)))
        return 1.0 / std if std > 0 else 1.0

    def train_diffusion(self, sequences: List[RadarSequence]) -> DiffusionModel:
        """Stage 2: fit the pixel condition encoder and denoiser with the autoencoder frozen.

        Raises:
            MissingStageError: If ``ae.ckpt`` does not exist
            UsageError: If the encoder changed while building conditions
        """
        autoencoder = self.load_autoencoder()
        autoencoder.store.freeze()
        before = autoencoder.checksum()
        windows = self.training_windows(sequences)
        model = self.build_diffusion()
        scale = self.estimate_latent_scale(autoencoder, windows)
        model.store.set_value(LATENT_SCALE, np.array([scale]))
        logger.info(f"Latent scale {scale:.6g} from {min(len(windows), 32)} windows")

        settings = self.settings(self.cfg.diffusion_steps, use_ema=True)
        rng = np.random.default_rng([self.cfg.seed, 2])
        horizon = self.cfg.horizon_frames

        def step(_: int) -> Tuple[Tensor, Dict[str, float]]:
            picks = rng.choice(len(windows), size=min(settings.batch_size, len(windows)), replace=False)
            losses: List[Tensor] = []
            for index in picks:
                w = windows[index]
                context, _ = w.context.as_batch(self.dtype)
                target, _ = w.target.as_batch(self.dtype)
                with no_grad():
                    z0 = autoencoder.encode(target).mean.data * scale
                    latent_cond = build_latent_condition(context, autoencoder, horizon, self.cfg.context_frames)
                cond = ConditionBundle(
                    latent_cond * scale, build_pixel_condition(context, model.pixel_encoder, horizon)
                )
                losses.append(training_loss(z0, cond, rng, model.schedule, model.denoiser))
            total = losses[0]
            for loss in losses[1:]:
                total = total + loss
            mean = total * (1.0 / len(losses))
            return mean, {"mse": mean.item()}

        with self.lock():
            TrainLoop(model.store, settings, label="diffusion", on_step=self.on_step).run(step)
            if autoencoder.checksum() != before:
                raise UsageError("encoder parameters changed during diffusion training")
            save_checkpoint(model.store, self.denoiser_path)
        logger.info(f"Denoiser saved to {self.denoiser_path}")
        return model

    def train_decoders(self, sequences: List[RadarSequence]) -> DecoderBank:
        """Stage 3: fit the decoder bank on band targets with the encoder frozen."""
        autoencoder = self.load_autoencoder()
        frames, valid = self.training_frames(sequences)
        settings = self.settings(self.cfg.decoder_steps)
        with self.lock():
            bank = train_decoder_bank(
                frames,
                valid,
                autoencoder,
                self.spec,
                settings,
                self.cfg.decoder_ssim_weight,
                on_step=self.on_step,
            )
            for name, entry in bank.decoders.items():
                save_checkpoint(entry.store, self.bank_dir / f"{name}.ckpt")
            write_manifest(self.manifest_path, bank.manifest_lines())
        logger.info(f"Decoder bank of {len(bank)} decoders saved to {self.bank_dir}")
        return bank

    # 推理
    def sample(
        self,
        context: RadarSequence,
        members: Optional[int] = None,
        seed: Optional[int] = None,
        components: Optional[Tuple[Autoencoder, DiffusionModel, DecoderBank]] = None,
    ) -> MultiForecast:
        """Ensemble forecast from the last ``CONTEXT_FRAMES`` frames.

        Raises:
            MissingStageError: If any of the three stages has not been run
            ContractError: If the context length is wrong
        """
        if len(context) != self.cfg.context_frames:
            raise ContractError(f"expected {self.cfg.context_frames} context frames, got {len(context)}")
        autoencoder, model, bank = components or (self.load_autoencoder(), self.load_diffusion(), self.load_bank())
        members = self.cfg.ensemble_size if members is None else members
        seed = self.cfg.seed if seed is None else seed
        with model.store.shadows_applied():
            return predict(
                context,
                autoencoder,
                model.pixel_encoder,
                model.denoiser,
                bank,
                model.schedule,
                members=members,
                seed=seed,
                horizon=self.cfg.horizon_frames,
                latent_scale=model.latent_scale,
            )

    def evaluate(
        self,
        forecast_dir: Path,
        obs_path: Path,
        out_csv: Path,
        offset: int = 0,
        system: str = "mtldm",
    ) -> List[MetricSeries]:
        """Score one system of a forecast directory against observed frames.

        ``offset`` is the index of the first observation matching lead 1.
        """
        ens = read_forecast(forecast_dir, system)
        obs = read_rgrd(obs_path)
        if offset < 0 or offset + ens.horizon > len(obs):
            raise ContractError(
                f"observations hold {len(obs)} frames; {ens.horizon} needed from offset {offset}"
            )
        obs = obs.slice(offset, offset + ens.horizon)
        series = evaluate_forecast(ens, obs, self.cfg.thresholds, self.cfg.pooling_scales, self.cfg.csi_mode)
        write_metrics_csv(
            series,
            out_csv,
            meta={"ensemble_size": ens.size, "csi_mode": self.cfg.csi_mode, "system": system},
        )
        return series

    def benchmark(self, windows: int = 20, leads: int = 8) -> BenchmarkReport:
        """Paired comparison on freshly generated held-out scenes.

        Scores the recomposed forecast against the overall decoder (top-band
        CSI over the first ``leads`` leads) and the trained sampler against an
        untrained one (CRPS at scale 1 on the overall forecast).
        """
        cfg = self.cfg
        autoencoder, model, bank = self.load_autoencoder(), self.load_diffusion(), self.load_bank()
        untrained = self.build_diffusion()
        untrained.store.set_value(LATENT_SCALE, np.array([model.latent_scale]))
        top = metrics.Event.exceedance(self.spec.thresholds[-1])
        span = cfg.context_frames + cfg.horizon_frames
        leads = min(leads, cfg.horizon_frames)
        csi_mtldm: List[float] = []
        csi_oa: List[float] = []
        crps_trained: List[float] = []
        crps_untrained: List[float] = []
        for i in range(windows):
            scene = generate(random_spec(cfg.seed + 100_000 + i, frames=span, size=cfg.image_size))
            context = scene.slice(0, cfg.context_frames)
            truth = scene.slice(cfg.context_frames, span)
            forecast = self.sample(context, components=(autoencoder, model, bank))
            baseline = self.sample(context, components=(autoencoder, untrained, bank))
            for name, bucket in (("mtldm", csi_mtldm), ("oa", csi_oa)):
                ens = forecast.to_ensemble(name)
                bucket.append(
                    metrics.nan_mean(
                        [metrics.ensemble_csi(ens.at_lead(k), truth[k], top, cfg.csi_mode) for k in range(leads)]
                    )
                )
            for fc, bucket in ((forecast, crps_trained), (baseline, crps_untrained)):
                ens = fc.to_ensemble("oa")
                bucket.append(
                    metrics.nan_mean([metrics.crps_ensemble(ens.at_lead(k), truth[k]) for k in range(ens.horizon)])
                )
            logger.info(f"Benchmark window {i + 1}/{windows} done")
        return BenchmarkReport(
            windows,
            metrics.nan_mean(csi_mtldm),
            metrics.nan_mean(csi_oa),
            metrics.nan_mean(crps_trained),
            metrics.nan_mean(crps_untrained),
        )

    def status(self) -> Dict[str, bool]:
        """Which stage artifacts exist."""
        bank_ready = self.manifest_path.is_file() and all(
            (self.bank_dir / f"{line.split()[0]}.ckpt").is_file() for line in read_manifest(self.manifest_path)
        )
        return {
            "ae.ckpt": self.ae_path.is_file(),
            "denoiser.ckpt": self.denoiser_path.is_file(),
            "bank": bank_ready,
        }
