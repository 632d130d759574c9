"""Tests for the differentiable tensor and its gradient checker."""

from typing import Callable

import numpy as np
import pytest

from src.numerics.gradcheck import check_gradients, numerical_gradient, relative_error
from src.numerics.tensor import (
    Tensor,
    concat,
    conv2d,
    grad_enabled,
    group_norm,
    matmul,
    no_grad,
    softmax,
    upsample_nearest,
)
from src.utils.error_handler import ShapeError, UsageError

TOLERANCE = 1e-4
SEEDS = range(20)


def _param(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _weighted(fn: Callable[[], Tensor], rng: np.random.Generator) -> Callable[[], Tensor]:
    """Turn a tensor-valued function into a scalar loss with fixed random weights."""
    weights = Tensor(rng.standard_normal(fn().shape))
    return lambda: (fn() * weights).sum()


class TestTensorBasics:
    """Test cases for forward values and graph recording."""

    def test_arithmetic_values(self) -> None:
        """Test forward results of the arithmetic operators."""
        a = Tensor(np.array([1.0, 2.0, 3.0]))
        b = Tensor(np.array([4.0, 5.0, 6.0]))
        np.testing.assert_array_equal((a + b).data, [5.0, 7.0, 9.0])
        np.testing.assert_array_equal((a - b).data, [-3.0, -3.0, -3.0])
        np.testing.assert_array_equal((a * b).data, [4.0, 10.0, 18.0])
        np.testing.assert_array_equal((1.0 - a).data, [0.0, -1.0, -2.0])
        np.testing.assert_array_equal((2.0 * a).data, [2.0, 4.0, 6.0])

    def test_integer_input_promoted(self) -> None:
        """Test integer payloads become float64."""
        assert Tensor(np.arange(3)).dtype == np.float64

    def test_backward_requires_scalar(self) -> None:
        """Test backward on a non-scalar raises UsageError."""
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(UsageError):
            (x * 2.0).backward()

    def test_item_requires_single_element(self) -> None:
        """Test item reads single-element tensors of any rank and rejects larger ones."""
        assert Tensor(np.array([[2.5]])).item() == 2.5
        with pytest.raises(ShapeError):
            Tensor(np.ones(3)).item()
        with pytest.raises(ShapeError):
            Tensor(np.zeros((0,))).item()

    def test_backward_accumulates_shared_parents(self) -> None:
        """Test gradients from two paths to the same leaf are summed."""
        x = Tensor(np.array([3.0]), requires_grad=True)
        (x * x + x).sum().backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_no_grad_disables_recording(self) -> None:
        """Test no_grad produces constants and restores the flag."""
        x = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            assert not grad_enabled()
            y = x * 3.0
        assert grad_enabled()
        assert not y.requires_grad

    def test_conv2d_output_size(self) -> None:
        """Test conv2d output size follows floor((in + 2p - k) / s) + 1."""
        x = Tensor(np.zeros((2, 3, 9, 7)))
        w = Tensor(np.zeros((5, 3, 3, 3)))
        assert conv2d(x, w, stride=2, padding=1).shape == (2, 5, 5, 4)
        assert conv2d(x, w).shape == (2, 5, 7, 5)

    def test_conv2d_channel_mismatch(self) -> None:
        """Test conv2d rejects a kernel with the wrong input channels."""
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_conv2d_matches_direct_sum(self) -> None:
        """Test conv2d against an explicit loop."""
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        out = conv2d(Tensor(x), Tensor(w)).data
        expected = np.zeros((1, 3, 3, 3))
        for o in range(3):
            for i in range(3):
                for j in range(3):
                    expected[0, o, i, j] = np.sum(x[0, :, i : i + 3, j : j + 3] * w[o])
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_conv2d_linear_in_input(self) -> None:
        """Test conv2d without bias is linear in its input."""
        rng = np.random.default_rng(3)
        x, y = rng.standard_normal((2, 2, 2, 6, 6))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        combined = conv2d(Tensor(2.5 * x - 0.5 * y), w, padding=1).data
        separate = 2.5 * conv2d(Tensor(x), w, padding=1).data - 0.5 * conv2d(Tensor(y), w, padding=1).data
        np.testing.assert_allclose(combined, separate, atol=1e-12)

    def test_conv2d_identity_kernel(self) -> None:
        """Test a 1x1 identity kernel returns its input."""
        x = np.random.default_rng(4).standard_normal((2, 3, 5, 4))
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1))
        np.testing.assert_array_equal(conv2d(Tensor(x), w).data, x)

    def test_group_norm_requires_divisible_channels(self) -> None:
        """Test group_norm rejects an uneven channel split."""
        x = Tensor(np.zeros((1, 3, 2, 2)))
        with pytest.raises(ShapeError):
            group_norm(x, 2, Tensor(np.ones(3)), Tensor(np.zeros(3)))

    def test_softmax_rows_sum_to_one(self) -> None:
        """Test softmax normalises along the chosen axis."""
        x = Tensor(np.random.default_rng(1).standard_normal((4, 6)) * 10)
        np.testing.assert_allclose(softmax(x, axis=-1).data.sum(axis=-1), np.ones(4))

    def test_concat_shape_error(self) -> None:
        """Test concat wraps numpy's error as ShapeError."""
        with pytest.raises(ShapeError):
            concat([Tensor(np.zeros((1, 2))), Tensor(np.zeros((2, 3)))], axis=1)


class TestGradients:
    """Finite-difference checks of every differentiable operation at float64."""

    @pytest.mark.parametrize("seed", SEEDS)
    def test_elementwise(self, seed: int) -> None:
        """Test arithmetic and smooth elementwise functions."""
        rng = np.random.default_rng(seed)
        a = _param(rng, 3, 4)
        b = _param(rng, 3, 4)
        positive = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)

        def fn() -> Tensor:
            return (
                a * b
                + a / positive
                + 2.0 / positive
                + positive.log()
                + positive.sqrt()
                + a.exp() * 0.1
                + b.silu()
                + a.softplus()
                + b.sigmoid()
                + positive**1.5
                - b
            )

        errors = check_gradients(_weighted(fn, rng), {"a": a, "b": b, "positive": positive})
        assert max(errors.values()) <= TOLERANCE

    @pytest.mark.parametrize("seed", SEEDS)
    def test_piecewise_away_from_kinks(self, seed: int) -> None:
        """Test abs and clip on inputs kept away from their kinks."""
        rng = np.random.default_rng(seed)
        base = rng.choice([-0.9, -0.3, 0.2, 0.35, 0.8], size=(4, 5))
        x = Tensor(base + rng.uniform(-0.02, 0.02, base.shape), requires_grad=True)
        errors = check_gradients(_weighted(lambda: x.abs() + x.clip(-0.5, 0.5), rng), {"x": x})
        assert errors["x"] <= TOLERANCE

    @pytest.mark.parametrize("seed", SEEDS)
    def test_reductions_and_shapes(self, seed: int) -> None:
        """Test sum, mean, reshape, transpose, broadcast, indexing and concat."""
        rng = np.random.default_rng(seed)
        x = _param(rng, 2, 3, 4)
        y = _param(rng, 2, 1, 4)

        def fn() -> Tensor:
            merged = concat([x, y], axis=1)
            reduced = merged.sum(axis=1, keepdims=True) + merged.mean(axis=(0, 2), keepdims=True)
            moved = merged.transpose(2, 0, 1).reshape(4, 8)
            return (
                reduced.broadcast_to((2, 4, 4)).reshape(8, 4).transpose(1, 0)
                + moved
                + x[:, 1:, ::2].sum() * 0.5
                + y.broadcast_to((2, 2, 4)).mean()
            )

        errors = check_gradients(_weighted(fn, rng), {"x": x, "y": y})
        assert max(errors.values()) <= TOLERANCE

    @pytest.mark.parametrize("seed", SEEDS)
    def test_matmul_and_softmax(self, seed: int) -> None:
        """Test batched matmul followed by softmax."""
        rng = np.random.default_rng(seed)
        a = _param(rng, 2, 3, 4)
        b = _param(rng, 2, 4, 5)
        errors = check_gradients(_weighted(lambda: softmax(matmul(a, b), axis=-1), rng), {"a": a, "b": b})
        assert max(errors.values()) <= TOLERANCE

    @pytest.mark.parametrize("seed", SEEDS)
    def test_conv2d(self, seed: int) -> None:
        """Test conv2d with random stride and padding."""
        rng = np.random.default_rng(seed)
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 2))
        x = _param(rng, 2, 2, 6, 5)
        w = _param(rng, 3, 2, 3, 3, scale=0.5)
        b = _param(rng, 3)
        errors = check_gradients(
            _weighted(lambda: conv2d(x, w, b, stride=stride, padding=padding), rng),
            {"x": x, "w": w, "b": b},
            max_entries=24,
        )
        assert max(errors.values()) <= TOLERANCE

    @pytest.mark.parametrize("seed", SEEDS)
    def test_group_norm_and_upsample(self, seed: int) -> None:
        """Test group normalisation followed by nearest upsampling."""
        rng = np.random.default_rng(seed)
        x = _param(rng, 2, 4, 3, 3)
        gamma = _param(rng, 4)
        beta = _param(rng, 4)
        errors = check_gradients(
            _weighted(lambda: upsample_nearest(group_norm(x, 2, gamma, beta), 2), rng),
            {"x": x, "gamma": gamma, "beta": beta},
            max_entries=24,
        )
        assert max(errors.values()) <= TOLERANCE


class TestGradcheck:
    """Test cases for the finite-difference helpers."""

    def test_relative_error_zero_for_equal(self) -> None:
        """Test identical gradients give zero error."""
        g = np.array([1.0, -2.0])
        assert relative_error(g, g) == 0.0

    def test_numerical_gradient_of_square(self) -> None:
        """Test central differences of sum(x^2) give 2x."""
        x = Tensor(np.array([1.0, -3.0, 0.5]), requires_grad=True)
        numeric = numerical_gradient(lambda: (x * x).sum(), x)
        np.testing.assert_allclose(numeric, 2 * x.data, rtol=1e-8)

    def test_float32_rejected(self) -> None:
        """Test finite differences refuse single precision."""
        x = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
        with pytest.raises(UsageError):
            numerical_gradient(lambda: x.sum(), x)

    def test_max_entries_leaves_rest_unchecked(self) -> None:
        """Test a partial check marks skipped entries as NaN."""
        x = Tensor(np.ones(10), requires_grad=True)
        numeric = numerical_gradient(lambda: x.sum(), x, max_entries=3)
        assert np.count_nonzero(~np.isnan(numeric)) == 3
