"""End-to-end desk-scale run: synthesise, train all stages, benchmark."""

import sys
from pathlib import Path

from src.core.pipeline import NowcastPipeline
from src.data.rgrd import write_rgrd
from src.data.synth import generate, random_spec
from src.utils.config import Config
from src.utils.logger import logger
from src.verification import metrics

SMOKE_CONFIG = {
    "IMAGE_SIZE": 64,
    "T_MAX": 200,
    "AE_STEPS": 2000,
    "DIFFUSION_STEPS": 20000,
    "DECODER_STEPS": 1000,
    "PRECISION": "float32",
}


def held_out_ssim(pipeline: NowcastPipeline, count: int = 8) -> float:
    """Mean reconstruction SSIM on scenes the autoencoder never saw."""
    autoencoder = pipeline.load_autoencoder()
    scores = []
    for i in range(count):
        scene = generate(random_spec(900_000 + i, frames=1, size=pipeline.cfg.image_size))
        frames, _ = scene.as_batch(pipeline.dtype)
        recon = autoencoder.decode(autoencoder.encode(frames).mean).data[0, 0]
        scores.append(metrics.ssim(scene[0].rate, recon, pipeline.cfg.ssim_window, pipeline.cfg.rate_ceiling))
    return metrics.nan_mean(scores)


def run(workdir: Path, seed: int = 0, sequences: int = 16) -> bool:
    """Run every stage in ``workdir`` and check the acceptance targets.

    Returns:
        True when all targets are met
    """
    values = dict(SMOKE_CONFIG, SEED=seed, DATA_DIR=workdir / "data", CHECKPOINT_DIR=workdir / "checkpoints")
    pipeline = NowcastPipeline(Config.from_mapping(values))
    cfg = pipeline.cfg
    for i in range(sequences):
        spec = random_spec(seed * 1000 + i, frames=cfg.context_frames + cfg.horizon_frames + 4, size=cfg.image_size)
        write_rgrd(generate(spec), cfg.data_dir / f"seq_{i:03d}.rgrd")

    data = pipeline.load_dataset()
    pipeline.train_autoencoder(data)
    pipeline.train_diffusion(data)
    pipeline.train_decoders(data)

    ssim_value = held_out_ssim(pipeline)
    report = pipeline.benchmark(windows=20)
    logger.info(
        f"seed={seed} ae_ssim={ssim_value:.4f} csi_mtldm={report.csi_mtldm:.4f} "
        f"csi_oa={report.csi_oa:.4f} crps_reduction={report.crps_gain:.4f}"
    )
    return ssim_value >= 0.85 and report.crps_gain >= 0.30 and report.csi_mtldm >= report.csi_oa


def main() -> None:
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("smoke")
    passed = [run(root / f"seed{seed}", seed) for seed in range(3)]
    logger.info(f"Seeds meeting every target: {sum(passed)}/3")
    sys.exit(0 if sum(passed) >= 2 else 1)


if __name__ == "__main__":
    main()
