"""Tests for PGM export and forecast directories."""

from pathlib import Path

import numpy as np
import pytest

from src.core.grid import RadarSequence, RainField
from src.data.export import (
    export_pgm,
    read_forecast,
    read_manifest,
    to_pgm,
    write_forecast,
    write_manifest,
)
from src.utils.error_handler import ContractError, MissingStageError


class TestPgm:
    """Test cases for PGM export."""

    def test_header_and_pixels(self) -> None:
        """Test linear scaling, saturation and invalid pixels."""
        f = RainField(np.array([[0.0, 16.0, 40.0], [32.0, 8.0, 5.0]]), np.array([[1, 1, 1], [1, 1, 0]], bool))
        payload = to_pgm(f, rate_ceiling=32.0)
        header = b"P5\n3 2\n255\n"
        assert payload.startswith(header)
        assert list(payload[len(header) :]) == [0, 128, 255, 255, 64, 0]

    def test_one_file_per_frame(self, tmp_path: Path) -> None:
        """Test export writes a PGM per frame."""
        seq = RadarSequence.from_arrays(np.ones((3, 4, 4), dtype=np.float32))
        paths = export_pgm(seq, tmp_path, stem="truth")
        assert [p.name for p in paths] == ["truth_000.pgm", "truth_001.pgm", "truth_002.pgm"]


class TestForecastFiles:
    """Test cases for forecast directories and manifests."""

    def setup_method(self) -> None:
        """Set up test fixtures."""
        rng = np.random.default_rng(0)
        self.systems = {
            "mtldm": rng.uniform(0, 5, (2, 3, 4, 4)),
            "oa": rng.uniform(0, 5, (2, 3, 4, 4)),
        }

    def test_write_and_read(self, tmp_path: Path) -> None:
        """Test members are named by system and index and read back in order."""
        truth = RadarSequence.from_arrays(np.zeros((3, 4, 4), dtype=np.float32))
        write_forecast(self.systems, tmp_path, step_minutes=5, truth=truth)
        assert (tmp_path / "truth.rgrd").is_file()
        ens = read_forecast(tmp_path, "oa")
        assert ens.size == 2
        assert ens.system == "oa"
        np.testing.assert_array_equal(ens.members[1].rates(), self.systems["oa"][1].astype(np.float32))

    def test_missing_system(self, tmp_path: Path) -> None:
        """Test an absent system raises MissingStageError."""
        write_forecast({"oa": self.systems["oa"]}, tmp_path)
        with pytest.raises(MissingStageError):
            read_forecast(tmp_path, "mtldm")

    def test_member_gap(self, tmp_path: Path) -> None:
        """Test non-contiguous member numbering raises ContractError."""
        write_forecast(self.systems, tmp_path)
        (tmp_path / "mtldm_m0.rgrd").unlink()
        with pytest.raises(ContractError):
            read_forecast(tmp_path, "mtldm")

    def test_manifest(self, tmp_path: Path) -> None:
        """Test manifest lines are kept in order."""
        lines = ["band0 band [0,1)", "overall overall [0,inf)"]
        assert read_manifest(write_manifest(tmp_path / "m.txt", lines)) == lines
