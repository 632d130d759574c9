"""Tests for the latent and pixel condition branches."""

import numpy as np
import pytest

from src.core.autoencoder import AeConfig, Autoencoder
from src.core.conditioning import (
    ConditionBundle,
    PixelConditionEncoder,
    build_conditions,
    build_latent_condition,
    build_pixel_condition,
    concat_with_noise,
)
from src.numerics.optim import ParamStore
from src.numerics.tensor import Tensor
from src.utils.error_handler import ContractError, ShapeError


class TestPixelCondition:
    """Test cases for the pixel-space branch."""

    def test_full_size_shapes(self) -> None:
        """Test 4 frames of 256x256 give a 12-channel 32x32 condition replicated over 16 steps."""
        encoder = PixelConditionEncoder(ParamStore())
        context = np.random.default_rng(0).uniform(0, 10, (4, 1, 256, 256))
        single = encoder(context)
        assert single.shape == (1, 12, 32, 32)
        replicated = build_pixel_condition(context, encoder, 16)
        assert replicated.shape == (16, 12, 32, 32)
        np.testing.assert_array_equal(replicated.data[0], replicated.data[15])

    def test_context_length(self) -> None:
        """Test a context of the wrong length raises ContractError."""
        encoder = PixelConditionEncoder(ParamStore(), out_channels=4, downsample_factor=2, groups=2)
        with pytest.raises(ContractError):
            encoder(np.zeros((3, 1, 8, 8)))

    def test_indivisible_context(self) -> None:
        """Test a context size not divisible by the factor raises ShapeError."""
        encoder = PixelConditionEncoder(ParamStore(), out_channels=4, downsample_factor=4, groups=2)
        with pytest.raises(ShapeError):
            encoder(np.zeros((4, 1, 6, 8)))


class TestLatentCondition:
    """Test cases for the latent branch and condition assembly."""

    def setup_method(self) -> None:
        """Set up test fixtures."""
        self.ae = Autoencoder(AeConfig())
        self.context = np.random.default_rng(1).uniform(0, 10, (4, 1, 64, 64))

    def test_merged_channels(self) -> None:
        """Test four context latents of C=4 merge into 16 channels per step."""
        cond = build_latent_condition(self.context, self.ae, 16)
        assert cond.shape == (16, 16, 8, 8)
        expected = self.ae.encode(self.context).mean.data.reshape(1, 16, 8, 8)
        np.testing.assert_allclose(cond.data[7:8], expected, atol=1e-12)

    def test_context_length(self) -> None:
        """Test a short context raises ContractError."""
        with pytest.raises(ContractError):
            build_latent_condition(self.context[:3], self.ae, 16)

    def test_encoder_untouched(self) -> None:
        """Test building conditions leaves the encoder parameters unchanged."""
        before = self.ae.checksum()
        build_latent_condition(self.context, self.ae, 4)
        assert self.ae.checksum() == before

    def test_gradients_reach_pixel_encoder_only(self) -> None:
        """Test a loss on both conditions trains the pixel branch but not the encoder."""
        store = ParamStore(seed=2)
        pixel = PixelConditionEncoder(store, out_channels=4, downsample_factor=8, groups=2)
        bundle = build_conditions(self.context, self.ae, pixel, 2)
        assert bundle.channels == 20
        loss = (bundle.latent_condition * bundle.latent_condition).sum() + (
            bundle.pixel_condition * bundle.pixel_condition
        ).sum()
        loss.backward()
        assert store["pixel_encoder.conv_in.weight"].grad is not None
        assert all(self.ae.store[name].grad is None for name in self.ae.store)


class TestConcat:
    """Test cases for ConditionBundle and concat_with_noise."""

    def setup_method(self) -> None:
        """Set up test fixtures."""
        self.bundle = ConditionBundle(Tensor(np.ones((3, 8, 4, 4))), Tensor(np.full((3, 2, 4, 4), 2.0)))

    def test_channel_order(self) -> None:
        """Test noise, latent condition and pixel condition are stacked in order."""
        joined = concat_with_noise(np.zeros((3, 2, 4, 4)), self.bundle)
        assert joined.shape == (3, 12, 4, 4)
        np.testing.assert_array_equal(joined.data[:, :2], 0.0)
        np.testing.assert_array_equal(joined.data[:, 2:10], 1.0)
        np.testing.assert_array_equal(joined.data[:, 10:], 2.0)

    def test_mismatched_noise(self) -> None:
        """Test a noisy latent with the wrong step count raises ShapeError."""
        with pytest.raises(ShapeError):
            concat_with_noise(np.zeros((2, 2, 4, 4)), self.bundle)

    def test_mismatched_bundle(self) -> None:
        """Test conditions disagreeing on (N, h, w) raise ShapeError."""
        with pytest.raises(ShapeError):
            ConditionBundle(Tensor(np.ones((3, 8, 4, 4))), Tensor(np.ones((3, 2, 2, 2))))
