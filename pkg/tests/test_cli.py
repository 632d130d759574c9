"""Tests for the command-line interface."""

import csv
from pathlib import Path

import numpy as np
from typer.testing import CliRunner

from src.cli.interface import _training_pipeline, app
from src.data.export import write_forecast
from src.data.rgrd import read_rgrd

runner = CliRunner()

TINY_CONFIG = """\
IMAGE_SIZE=8
DOWNSAMPLE_FACTOR=2
LATENT_CHANNELS=2
AE_BASE_CHANNELS=4
NORM_GROUPS=2
SSIM_WINDOW=3
PIXEL_CONDITION_CHANNELS=4
DENOISER_CHANNELS=4
DENOISER_DEPTH=1
EMBED_DIM=4
T_MAX=4
AE_STEPS=2
DIFFUSION_STEPS=2
DECODER_STEPS=1
BATCH_SIZE=2
HORIZON_FRAMES=4
ENSEMBLE_SIZE=2
PRECISION=float64
POOLING_SCALES=1,2
"""


class TestCli:
    """Test cases for CLI commands."""

    def setup_method(self) -> None:
        """Set up test fixtures."""
        self.runner = runner

    def _config(self, tmp_path: Path, extra: str = "") -> str:
        path = tmp_path / "run.env"
        path.write_text(
            TINY_CONFIG + f"DATA_DIR={tmp_path / 'data'}\nCHECKPOINT_DIR={tmp_path / 'ckpt'}\n" + extra,
            encoding="utf-8",
        )
        return str(path)

    def _invoke(self, cfg: str, *args: str):
        return self.runner.invoke(app, ["--config", cfg, *args])

    def test_help(self) -> None:
        """Test help lists the commands."""
        result = self.runner.invoke(app, ["--help"])
        assert result.exit_code == 0
        for command in ("synth", "train-ae", "sample", "eval", "benchmark"):
            assert command in result.output

    def test_unknown_config_key(self, tmp_path: Path) -> None:
        """Test an unknown key exits with the configuration status."""
        result = self._invoke(self._config(tmp_path, "NOT_A_KEY=1\n"), "status")
        assert result.exit_code == 2
        assert "error=config" in result.output
        assert "NOT_A_KEY" in result.output

    def test_synth_and_manifest(self, tmp_path: Path) -> None:
        """Test synth writes sequences and their manifest."""
        cfg = self._config(tmp_path)
        result = self._invoke(cfg, "synth", str(tmp_path / "data"), "-k", "2", "-f", "6")
        assert result.exit_code == 0
        assert len(read_rgrd(tmp_path / "data" / "seq_001.rgrd")) == 6
        lines = (tmp_path / "data" / "manifest.txt").read_text(encoding="utf-8").splitlines()
        assert lines == ["seq_000.rgrd 6 0", "seq_001.rgrd 6 1"]

    def test_decompose_and_export(self, tmp_path: Path) -> None:
        """Test band files and PGM frames are written."""
        cfg = self._config(tmp_path)
        self._invoke(cfg, "synth", str(tmp_path / "data"), "-k", "1", "-f", "3")
        source = tmp_path / "data" / "seq_000.rgrd"
        result = self._invoke(cfg, "decompose", str(source), str(tmp_path / "bands"))
        assert result.exit_code == 0
        assert sorted(p.name for p in (tmp_path / "bands").iterdir()) == [f"band{k}.rgrd" for k in range(4)]
        bands = [read_rgrd(tmp_path / "bands" / f"band{k}.rgrd").rates() for k in range(4)]
        np.testing.assert_array_equal(np.sum(bands, axis=0), read_rgrd(source).rates())
        result = self._invoke(cfg, "export-pgm", str(source), str(tmp_path / "pgm"))
        assert result.exit_code == 0
        assert len(list((tmp_path / "pgm").glob("seq_000_*.pgm"))) == 3

    def test_missing_stage(self, tmp_path: Path) -> None:
        """Test stage 2 before stage 1 exits with the missing-stage status."""
        cfg = self._config(tmp_path)
        self._invoke(cfg, "synth", str(tmp_path / "data"), "-k", "2", "-f", "10")
        result = self._invoke(cfg, "train-diffusion", "--data-dir", str(tmp_path / "data"))
        assert result.exit_code == 3
        assert "error=missing-stage" in result.output
        assert "ae.ckpt" in result.output

    def test_bad_rgrd(self, tmp_path: Path) -> None:
        """Test a corrupt input file exits with the format status."""
        bad = tmp_path / "bad.rgrd"
        bad.write_bytes(b"GRID" + b"\x00" * 20)
        result = self._invoke(self._config(tmp_path), "export-pgm", str(bad), str(tmp_path / "pgm"))
        assert result.exit_code == 4
        assert "error=format" in result.output

    def test_status_before_training(self, tmp_path: Path) -> None:
        """Test status lists every artifact as missing."""
        result = self._invoke(self._config(tmp_path), "status")
        assert result.exit_code == 0
        for artifact in ("ae.ckpt", "denoiser.ckpt", "bank"):
            assert f"{artifact}: missing" in result.output

    def test_end_to_end(self, tmp_path: Path) -> None:
        """Test training, reproducible sampling and evaluation through the CLI."""
        cfg = self._config(tmp_path)
        data = str(tmp_path / "data")
        assert self._invoke(cfg, "synth", data, "-k", "3", "-f", "10").exit_code == 0
        for command in ("train-ae", "train-diffusion", "train-decoders"):
            result = self._invoke(cfg, command, "--data-dir", data)
            assert result.exit_code == 0, result.output

        status = self._invoke(cfg, "status")
        assert "bank: ready" in status.output

        source = str(tmp_path / "data" / "seq_000.rgrd")
        for out in ("fc1", "fc2"):
            result = self._invoke(cfg, "sample", source, str(tmp_path / out), "--seed", "7")
            assert result.exit_code == 0, result.output
        names = sorted(p.name for p in (tmp_path / "fc1").iterdir())
        assert {"mtldm_m0.rgrd", "mtldm_m1.rgrd", "oa_m0.rgrd", "band3_m1.rgrd", "truth.rgrd"} <= set(names)
        for name in names:
            assert (tmp_path / "fc1" / name).read_bytes() == (tmp_path / "fc2" / name).read_bytes()

        result = self._invoke(cfg, "eval", str(tmp_path / "fc1"), source, str(tmp_path / "m.csv"), "--offset", "4")
        assert result.exit_code == 0, result.output
        assert (tmp_path / "m.csv.meta").exists()

    def test_eval_perfect_forecast(self, tmp_path: Path) -> None:
        """Test scoring observations against themselves gives perfect CSI and zero CRPS."""
        cfg = self._config(tmp_path)
        self._invoke(cfg, "synth", str(tmp_path / "data"), "-k", "1", "-f", "8")
        source = tmp_path / "data" / "seq_000.rgrd"
        truth = read_rgrd(source).slice(4, 8)
        write_forecast({"mtldm": np.stack([truth.rates()] * 2)}, tmp_path / "fc")
        result = self._invoke(cfg, "eval", str(tmp_path / "fc"), str(source), str(tmp_path / "m.csv"), "--offset", "4")
        assert result.exit_code == 0, result.output
        with open(tmp_path / "m.csv", encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
        assert {r["value"] for r in rows if r["metric"] == "csi"} <= {"1", "nan"}
        assert {r["value"] for r in rows if r["metric"] == "crps"} == {"0"}
        assert {r["value"] for r in rows if r["metric"] == "mse"} == {"0"}

    def test_training_progress_hook(self) -> None:
        """Test training commands get a pipeline wired to a progress bar per label."""
        with _training_pipeline() as pipeline:
            assert pipeline.on_step is not None
            pipeline.on_step("ae", 1, 2, 0.5)
            pipeline.on_step("ae", 2, 2, 0.25)
            pipeline.on_step("band0", 1, 1, 0.1)
