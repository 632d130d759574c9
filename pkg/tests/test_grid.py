"""Tests for rain fields, sequences and raw-frame decoding."""

import numpy as np
import pytest

from src.core.grid import (
    ForecastEnsemble,
    RadarSequence,
    RainField,
    TransferFunction,
    TransferKind,
    crop,
    decode_raw_frame,
)
from src.utils.error_handler import ContractError, GridRangeError, MalformedInputError, ShapeError


class TestRainField:
    """Test cases for RainField."""

    def test_invalid_pixels_zeroed(self) -> None:
        """Test rates under the mask are stored as 0, even NaN."""
        rate = np.array([[1.0, np.nan], [3.0, 4.0]])
        valid = np.array([[True, False], [True, True]])
        f = RainField(rate, valid)
        assert f.rate[0, 1] == 0.0
        assert f.invalid_count() == 1
        assert f.rate.dtype == np.float32

    def test_negative_valid_rate(self) -> None:
        """Test a negative measured rate raises MalformedInputError."""
        with pytest.raises(MalformedInputError):
            RainField(np.array([[-1.0, 0.0]]))

    def test_non_finite_valid_rate(self) -> None:
        """Test an infinite measured rate raises MalformedInputError."""
        with pytest.raises(MalformedInputError):
            RainField(np.array([[np.inf]]))

    def test_shape_errors(self) -> None:
        """Test non-2D rates and mismatched masks raise ShapeError."""
        with pytest.raises(ShapeError):
            RainField(np.zeros(4))
        with pytest.raises(ShapeError):
            RainField(np.zeros((2, 2)), np.ones((2, 3), dtype=bool))

    def test_read_only(self) -> None:
        """Test stored arrays cannot be modified."""
        f = RainField.zeros(2, 2)
        with pytest.raises(ValueError):
            f.rate[0, 0] = 1.0

    def test_equality_and_hash(self) -> None:
        """Test bit-exact equality and matching hashes."""
        a = RainField(np.full((2, 2), 1.5))
        b = RainField(np.full((2, 2), 1.5))
        assert a == b
        assert hash(a) == hash(b)
        assert a != a.with_rate(np.full((2, 2), 1.5000001))


class TestRadarSequence:
    """Test cases for RadarSequence and ForecastEnsemble."""

    def setup_method(self) -> None:
        """Set up test fixtures."""
        rates = np.arange(5 * 4 * 4, dtype=np.float32).reshape(5, 4, 4)
        self.seq = RadarSequence.from_arrays(rates, step_minutes=5)

    def test_empty_sequence(self) -> None:
        """Test an empty sequence raises ContractError."""
        with pytest.raises(ContractError):
            RadarSequence([])

    def test_non_positive_step(self) -> None:
        """Test a zero cadence raises ContractError."""
        with pytest.raises(ContractError):
            RadarSequence([RainField.zeros(2, 2)], step_minutes=0)

    def test_mixed_shapes(self) -> None:
        """Test frames of different shapes raise ShapeError."""
        with pytest.raises(ShapeError):
            RadarSequence([RainField.zeros(2, 2), RainField.zeros(3, 3)])

    def test_lead_minutes(self) -> None:
        """Test leads run T+step .. T+len*step."""
        assert self.seq.lead_minutes() == [5, 10, 15, 20, 25]

    def test_as_batch(self) -> None:
        """Test the network layout."""
        rates, masks = self.seq.as_batch(np.float64)
        assert rates.shape == (5, 1, 4, 4)
        assert rates.dtype == np.float64
        assert masks.all()

    def test_slice(self) -> None:
        """Test slicing and its range check."""
        assert len(self.seq.slice(1, 3)) == 2
        assert self.seq.slice(1, 3)[0] == self.seq[1]
        with pytest.raises(GridRangeError):
            self.seq.slice(3, 9)

    def test_crop(self) -> None:
        """Test cropping every frame and its range check."""
        cropped = crop(self.seq, 1, 2, 2)
        np.testing.assert_array_equal(cropped[0].rate, self.seq[0].rate[1:3, 2:4])
        with pytest.raises(GridRangeError):
            crop(self.seq, 3, 3, 2)

    def test_ensemble_mean_field(self) -> None:
        """Test the pixelwise member mean."""
        other = RadarSequence.from_arrays(self.seq.rates() + 2.0)
        ens = ForecastEnsemble([self.seq, other])
        assert ens.size == 2
        assert ens.horizon == 5
        np.testing.assert_allclose(ens.mean_field(0).rate, self.seq[0].rate + 1.0)

    def test_ensemble_length_mismatch(self) -> None:
        """Test members of different lengths raise ContractError."""
        with pytest.raises(ContractError):
            ForecastEnsemble([self.seq, self.seq.slice(0, 2)])


class TestDecodeRawFrame:
    """Test cases for decode_raw_frame."""

    def test_nodata_code(self) -> None:
        """Test code 255 marks invalid pixels with rate 0."""
        f = decode_raw_frame(np.array([[0, 10], [255, 254]], dtype=np.uint8))
        np.testing.assert_array_equal(f.valid, [[True, True], [False, True]])
        np.testing.assert_array_equal(f.rate, [[0.0, 10.0], [0.0, 254.0]])

    def test_linear_scale(self) -> None:
        """Test the linear-scale transfer function."""
        tf = TransferFunction(TransferKind.LINEAR_SCALE, 0.5)
        f = decode_raw_frame(np.array([[4, 9]]), tf)
        np.testing.assert_array_equal(f.rate, [[2.0, 4.5]])

    def test_out_of_range_codes(self) -> None:
        """Test codes outside [0, 255] raise MalformedInputError."""
        with pytest.raises(MalformedInputError):
            decode_raw_frame(np.array([[256]]))
        with pytest.raises(MalformedInputError):
            decode_raw_frame(np.array([[-1]]))

    def test_bad_scale(self) -> None:
        """Test a non-positive scale raises MalformedInputError."""
        with pytest.raises(MalformedInputError):
            TransferFunction(TransferKind.LINEAR_SCALE, 0.0)
