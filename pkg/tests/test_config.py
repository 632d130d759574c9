"""Tests for configuration loading and validation."""

from pathlib import Path

import numpy as np
import pytest

from src.utils.config import Config
from src.utils.error_handler import ConfigError


class TestConfig:
    """Test cases for Config."""

    def test_defaults(self) -> None:
        """Test documented defaults when no key is given."""
        cfg = Config({})
        assert cfg.image_size == 64
        assert cfg.thresholds == (1.0, 4.0, 8.0)
        assert cfg.pooling_scales == (1, 4, 16)
        assert cfg.t_max == 1000
        assert cfg.dtype is np.float32
        assert cfg.latent_size == 8
        assert cfg.validate()

    def test_from_file(self, tmp_path: Path) -> None:
        """Test KEY=VALUE files with comments and lists."""
        path = tmp_path / "run.env"
        path.write_text("# tiny run\nIMAGE_SIZE=32\nTHRESHOLDS=0.5,2,6\nPRECISION=float64\n", encoding="utf-8")
        cfg = Config.from_file(path)
        assert cfg.image_size == 32
        assert cfg.thresholds == (0.5, 2.0, 6.0)
        assert cfg.dtype is np.float64

    def test_example_file_matches_defaults(self) -> None:
        """Test the shipped example file holds only known keys and the defaults."""
        cfg = Config.from_file(Path(__file__).resolve().parents[1] / "env.example")
        defaults = Config({})
        assert vars(cfg) | {"_values": None, "_seen": None} == vars(defaults) | {"_values": None, "_seen": None}

    def test_unknown_key(self, tmp_path: Path) -> None:
        """Test unknown keys in a file are rejected."""
        path = tmp_path / "run.env"
        path.write_text("IMAGE_SIZ=32\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="IMAGE_SIZ"):
            Config.from_file(path)

    def test_missing_file(self, tmp_path: Path) -> None:
        """Test a missing file raises ConfigError."""
        with pytest.raises(ConfigError):
            Config.from_file(tmp_path / "absent.env")

    def test_bad_number(self) -> None:
        """Test a non-numeric value keeps the parse error as its cause."""
        with pytest.raises(ConfigError) as exc:
            Config.from_mapping({"T_MAX": "many"})
        assert isinstance(exc.value.original_error, ValueError)

    @pytest.mark.parametrize(
        "values",
        [
            {"DOWNSAMPLE_FACTOR": 3},
            {"IMAGE_SIZE": 60},
            {"THRESHOLDS": (4, 1)},
            {"THRESHOLDS": (0, 1)},
            {"BETA_START": 0.5, "BETA_END": 0.1},
            {"PRECISION": "float16"},
            {"CSI_MODE": "median"},
            {"SSIM_WINDOW": 4},
            {"TEMPORAL_KERNEL": 2},
            {"SPATIAL_KERNEL": 4},
            {"ENSEMBLE_SIZE": 0},
            {"EMA_DECAY": 1.0},
        ],
    )
    def test_invalid_values(self, values: dict) -> None:
        """Test each validation rule."""
        with pytest.raises(ConfigError):
            Config.from_mapping(values)
