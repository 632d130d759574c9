"""Tests for threshold decomposition."""

import math

import numpy as np
import pytest

from src.core.bands import (
    BandSet,
    ThresholdSpec,
    band_mask,
    decompose,
    decompose_sequence,
    exceedance_mask,
    recompose,
)
from src.core.grid import RadarSequence, RainField
from src.utils.error_handler import ConfigError, ShapeError


def _random_spec(rng: np.random.Generator) -> ThresholdSpec:
    count = int(rng.integers(1, 6))
    values = np.unique(np.round(rng.uniform(0.1, 30.0, size=count), 3))
    return ThresholdSpec(tuple(float(v) for v in values))


class TestThresholdSpec:
    """Test cases for ThresholdSpec."""

    def test_default_bands(self) -> None:
        """Test three thresholds give four bands."""
        spec = ThresholdSpec()
        assert spec.band_count == 4
        assert spec.intervals() == [(0.0, 1.0), (1.0, 4.0), (4.0, 8.0), (8.0, math.inf)]

    @pytest.mark.parametrize("values", [(), (2.0, 1.0), (1.0, 1.0), (0.0, 4.0), (-1.0,), (1.0, math.inf)])
    def test_invalid_thresholds(self, values: tuple) -> None:
        """Test empty, non-increasing, non-positive and infinite thresholds."""
        with pytest.raises(ConfigError):
            ThresholdSpec(values)

    def test_boundary_goes_to_upper_band(self) -> None:
        """Test a rate equal to a threshold belongs to the band starting there."""
        spec = ThresholdSpec()
        np.testing.assert_array_equal(spec.band_of(np.array([0.0, 0.99, 1.0, 4.0, 8.0, 50.0])), [0, 0, 1, 2, 3, 3])


class TestDecompose:
    """Test cases for decompose and recompose."""

    def setup_method(self) -> None:
        """Set up test fixtures."""
        self.field = RainField(np.array([[0.0, 0.5, 1.0], [3.9, 4.0, 12.0]]), np.array([[1, 1, 1], [1, 0, 1]], bool))
        self.spec = ThresholdSpec()

    def test_bands_are_disjoint(self) -> None:
        """Test each valid nonzero pixel appears in exactly one band."""
        bands = decompose(self.field, self.spec).bands
        nonzero = np.sum([b.rate > 0 for b in bands], axis=0)
        assert nonzero.max() == 1
        np.testing.assert_array_equal(bands[1].rate, np.array([[0.0, 0.0, 1.0], [3.9, 0.0, 0.0]], dtype=np.float32))
        np.testing.assert_array_equal(bands[3].rate, [[0.0, 0.0, 0.0], [0.0, 0.0, 12.0]])

    def test_bands_carry_source_mask(self) -> None:
        """Test every band keeps the source validity."""
        for band in decompose(self.field, self.spec).bands:
            np.testing.assert_array_equal(band.valid, self.field.valid)

    def test_recompose_identity_random(self) -> None:
        """Test recompose(decompose(f)) == f bit-exactly for 1000 random fields and specs."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            spec = _random_spec(rng)
            rate = rng.uniform(0.0, 40.0, size=(8, 8)) * (rng.random((8, 8)) > 0.3)
            f = RainField(rate, rng.random((8, 8)) > 0.1)
            assert recompose(decompose(f, spec)) == f

    def test_bandset_arity(self) -> None:
        """Test a BandSet with the wrong band count raises ShapeError."""
        with pytest.raises(ShapeError):
            BandSet(self.spec, (self.field,))

    def test_masks(self) -> None:
        """Test exceedance and band masks exclude invalid pixels."""
        np.testing.assert_array_equal(exceedance_mask(self.field, 4.0), [[False, False, False], [False, False, True]])
        np.testing.assert_array_equal(band_mask(self.field, 1.0, 4.0), [[False, False, True], [True, False, False]])
        with pytest.raises(ConfigError):
            exceedance_mask(self.field, -1.0)

    def test_decompose_idempotent(self) -> None:
        """Test decomposing a band again returns that band and empty others."""
        first = decompose(self.field, self.spec).bands
        for k, band in enumerate(first):
            again = decompose(band, self.spec).bands
            assert again[k] == band
            for j, other in enumerate(again):
                if j != k:
                    np.testing.assert_array_equal(other.rate, 0.0)

    def test_exceedance_extremes(self) -> None:
        """Test a zero threshold marks every valid pixel and one above the maximum marks none."""
        np.testing.assert_array_equal(exceedance_mask(self.field, 0.0), self.field.valid)
        assert not exceedance_mask(self.field, 12.5).any()

    def test_decompose_sequence(self) -> None:
        """Test one band sequence per band with the source cadence."""
        seq = RadarSequence([self.field, self.field], step_minutes=6)
        bands = decompose_sequence(seq, self.spec)
        assert len(bands) == 4
        assert all(len(b) == 2 and b.step_minutes == 6 for b in bands)
