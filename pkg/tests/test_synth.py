"""Tests for synthetic storm generation."""

import numpy as np
import pytest

from src.data.synth import StormCell, StormSpec, generate, random_spec, window
from src.utils.error_handler import ConfigError, ContractError


class TestGenerate:
    """Test cases for generate and random_spec."""

    def setup_method(self) -> None:
        """Set up test fixtures."""
        cell = StormCell(center=(10.0, 20.0), velocity=(2.0, -1.0), peak=12.0, radius=3.0)
        self.spec = StormSpec((cell,), frames=5, size=32, seed=1)

    def test_shape_and_cadence(self) -> None:
        """Test frame count, size and step."""
        seq = generate(self.spec)
        assert len(seq) == 5
        assert seq.height == seq.width == 32
        assert seq.step_minutes == 5

    def test_peak_at_center(self) -> None:
        """Test frame 0 peaks at the cell centre (column x, row y)."""
        frame = generate(self.spec)[0].rate
        assert np.unravel_index(np.argmax(frame), frame.shape) == (20, 10)
        assert frame[20, 10] == pytest.approx(12.0, rel=1e-6)

    def test_advection(self) -> None:
        """Test the peak moves by the velocity each frame."""
        frame = generate(self.spec)[3].rate
        assert np.unravel_index(np.argmax(frame), frame.shape) == (17, 16)

    def test_growth(self) -> None:
        """Test exponential growth of the peak intensity."""
        cell = StormCell(center=(8.0, 8.0), velocity=(0.0, 0.0), peak=4.0, radius=2.0, growth=0.1)
        seq = generate(StormSpec((cell,), frames=3, size=16))
        assert seq[2].rate.max() == pytest.approx(4.0 * np.exp(0.2), rel=1e-5)

    def test_no_cells(self) -> None:
        """Test a scene without cells is all zero."""
        seq = generate(StormSpec((), frames=3, size=8))
        assert len(seq) == 3
        assert seq.rates().max() == 0.0

    def test_static_cell(self) -> None:
        """Test a cell with zero velocity and growth keeps its position and field."""
        cell = StormCell(center=(12.0, 9.0), velocity=(0.0, 0.0), peak=7.0, radius=2.5)
        seq = generate(StormSpec((cell,), frames=4, size=24))
        for frame in seq:
            assert np.unravel_index(np.argmax(frame.rate), frame.rate.shape) == (9, 12)
            assert frame == seq[0]

    def test_total_mass(self) -> None:
        """Test the summed rate of an interior cell is positive and matches the Gaussian volume."""
        cell = StormCell(center=(16.0, 16.0), velocity=(0.0, 0.0), peak=12.0, radius=3.0)
        total = float(generate(StormSpec((cell,), frames=1, size=32))[0].rate.sum(dtype=np.float64))
        volume = 2 * np.pi * 3.0**2 * 12.0
        assert 0.0 < total <= volume * 1.001
        assert total == pytest.approx(volume, rel=1e-3)

    def test_deterministic(self) -> None:
        """Test identical specs give identical sequences."""
        noisy = StormSpec(self.spec.cells, frames=3, size=16, seed=4, noise=0.5)
        assert generate(noisy) == generate(noisy)
        assert generate(random_spec(7, frames=3, size=16)) == generate(random_spec(7, frames=3, size=16))

    def test_rates_non_negative(self) -> None:
        """Test noise never drives rates below zero."""
        seq = generate(StormSpec(self.spec.cells, frames=3, size=16, seed=2, noise=3.0))
        assert seq.rates().min() >= 0.0

    def test_random_spec_bounds(self) -> None:
        """Test drawn cells respect the documented ranges."""
        spec = random_spec(3, max_cells=4)
        assert 1 <= len(spec.cells) <= 4
        assert all(6.0 <= c.peak <= 20.0 for c in spec.cells)

    def test_invalid_cells(self) -> None:
        """Test non-positive peak or radius raise ConfigError."""
        with pytest.raises(ConfigError):
            StormCell(center=(0, 0), velocity=(0, 0), peak=0.0, radius=1.0)
        with pytest.raises(ConfigError):
            StormCell(center=(0, 0), velocity=(0, 0), peak=1.0, radius=-1.0)
        with pytest.raises(ConfigError):
            StormSpec(frames=0)


class TestWindow:
    """Test cases for window."""

    def setup_method(self) -> None:
        """Set up test fixtures."""
        self.seq = generate(random_spec(0, frames=22, size=16))

    def test_count_and_split(self) -> None:
        """Test every start position yields 4 context and 16 target frames."""
        windows = window(self.seq)
        assert len(windows) == 3
        assert len(windows[1].context) == 4
        assert len(windows[1].target) == 16
        assert windows[1].context[0] == self.seq[1]
        assert windows[1].target[0] == self.seq[5]

    def test_stride(self) -> None:
        """Test strided windows."""
        assert [w.start for w in window(self.seq, stride=2)] == [0, 2]

    def test_default_window_count(self) -> None:
        """Test 25 frames with 4 context, 16 target frames and stride 1 give 6 windows."""
        seq = generate(random_spec(1, frames=25, size=8))
        assert [w.start for w in window(seq)] == [0, 1, 2, 3, 4, 5]

    def test_too_short(self) -> None:
        """Test a short sequence raises ContractError."""
        with pytest.raises(ContractError):
            window(self.seq.slice(0, 10))

    def test_bad_stride(self) -> None:
        """Test a zero stride raises ContractError."""
        with pytest.raises(ContractError):
            window(self.seq, stride=0)
