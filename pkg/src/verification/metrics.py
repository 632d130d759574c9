"""Forecast verification scores.

Categorical scores come from a 2x2 contingency table over jointly valid
pixels. CRPS uses the empirical ensemble estimator. SSIM is written on
``Tensor`` so the autoencoder and decoder losses differentiate through the
same code that scores forecasts.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.core.grid import RainField
from src.numerics.tensor import Tensor, conv2d, no_grad
from src.utils.error_handler import ConfigError, ShapeError

FieldInput = Union[RainField, np.ndarray]

SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class Event:
    """Binary precipitation event ``lo <= rate < hi``."""

    lo: float
    hi: float = math.inf

    @classmethod
    def exceedance(cls, threshold: float) -> "Event":
        return cls(float(threshold))

    @classmethod
    def band(cls, lo: float, hi: float) -> "Event":
        return cls(float(lo), float(hi))

    @property
    def descriptor(self) -> str:
        if math.isinf(self.hi):
            return f">={self.lo:g}"
        return f"[{self.lo:g}:{self.hi:g})"

    def mask(self, rate: np.ndarray) -> np.ndarray:
        return (rate >= self.lo) & (rate < self.hi)


@dataclass(frozen=True)
class ContingencyCounts:
    """2x2 table of a binary forecast against observations."""

    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int

    @property
    def total(self) -> int:
        return self.hits + self.misses + self.false_alarms + self.correct_negatives

    @property
    def csi(self) -> float:
        denominator = self.hits + self.misses + self.false_alarms
        return self.hits / denominator if denominator else math.nan

    @property
    def pod(self) -> float:
        denominator = self.hits + self.misses
        return self.hits / denominator if denominator else math.nan

    @property
    def far(self) -> float:
        denominator = self.hits + self.false_alarms
        return self.false_alarms / denominator if denominator else math.nan


def _split(field: FieldInput) -> Tuple[np.ndarray, np.ndarray]:
    """Rates as float64 plus the validity mask."""
    if isinstance(field, RainField):
        return field.rate.astype(np.float64), field.valid
    rate = np.asarray(field, dtype=np.float64)
    return rate, np.ones(rate.shape, dtype=bool)


def _as_event(event: Union[Event, float, Tuple[float, float]]) -> Event:
    if isinstance(event, Event):
        return event
    if isinstance(event, tuple):
        return Event.band(*event)
    return Event.exceedance(event)


def contingency(
    pred: FieldInput, obs: FieldInput, event: Union[Event, float, Tuple[float, float]]
) -> ContingencyCounts:
    """Count hits, misses, false alarms and correct negatives.

    Raises:
        ShapeError: If the fields differ in shape
    """
    p, p_valid = _split(pred)
    o, o_valid = _split(obs)
    if p.shape != o.shape:
        raise ShapeError(f"forecast shape {p.shape} differs from observation shape {o.shape}")
    event = _as_event(event)
    both = p_valid & o_valid
    forecast = event.mask(p) & both
    observed = event.mask(o) & both
    hits = int(np.sum(forecast & observed))
    misses = int(np.sum(~forecast & observed))
    false_alarms = int(np.sum(forecast & ~observed))
    return ContingencyCounts(hits, misses, false_alarms, int(both.sum()) - hits - misses - false_alarms)


def csi(pred: FieldInput, obs: FieldInput, event: Union[Event, float, Tuple[float, float]]) -> float:
    """Critical success index; NaN when neither field holds the event."""
    return contingency(pred, obs, event).csi


def pod(pred: FieldInput, obs: FieldInput, event: Union[Event, float, Tuple[float, float]]) -> float:
    return contingency(pred, obs, event).pod


def far(pred: FieldInput, obs: FieldInput, event: Union[Event, float, Tuple[float, float]]) -> float:
    return contingency(pred, obs, event).far


def nan_mean(values: Sequence[float]) -> float:
    defined = [v for v in values if not math.isnan(v)]
    return float(np.mean(defined)) if defined else math.nan


def ensemble_csi(
    members: Sequence[RainField],
    obs: RainField,
    event: Union[Event, float, Tuple[float, float]],
    mode: str = "member-mean",
) -> float:
    """Reduce an ensemble to one CSI.

    Modes: ``member-mean`` averages defined per-member CSI, ``single-member``
    scores member 0, ``ensemble-mean`` scores the pixelwise mean field.
    """
    if mode == "member-mean":
        return nan_mean([csi(m, obs, event) for m in members])
    if mode == "single-member":
        return csi(members[0], obs, event)
    if mode == "ensemble-mean":
        valid = np.logical_and.reduce([m.valid for m in members])
        return csi(RainField(np.mean([m.rate for m in members], axis=0), valid), obs, event)
    raise ConfigError(f"unknown CSI mode {mode!r}")


def crps_ensemble(members: Sequence[FieldInput], obs: FieldInput) -> float:
    """Mean empirical CRPS over pixels valid in the observation and every member.

    Per pixel: ``mean_i |x_i - y| - 1/(2 S^2) sum_ij |x_i - x_j|``.

    Returns:
        Mean CRPS, NaN when no pixel is valid
    """
    if not members:
        raise ShapeError("CRPS needs at least one ensemble member")
    y, valid = _split(obs)
    stack = []
    for member in members:
        x, member_valid = _split(member)
        if x.shape != y.shape:
            raise ShapeError(f"member shape {x.shape} differs from observation shape {y.shape}")
        stack.append(x)
        valid = valid & member_valid
    if not valid.any():
        return math.nan
    ensemble = np.stack(stack)[:, valid]
    target = y[valid]
    size = ensemble.shape[0]
    accuracy = np.abs(ensemble - target[None, :]).sum(axis=0)
    spread = np.abs(ensemble[None, :, :] - ensemble[:, None, :]).sum(axis=(0, 1))
    score = accuracy / size - spread / (2 * size**2)
    return float(score.mean())


def pool(f: FieldInput, scale: int) -> FieldInput:
    """Non-overlapping scale x scale mean over valid pixels.

    A pooled cell is invalid only when all of its pixels are invalid. Plain
    arrays are treated as fully valid and pooled to float64 arrays.

    Raises:
        ShapeError: If ``scale`` does not divide both dimensions
    """
    rate, valid = _split(f)
    height, width = rate.shape
    if scale < 1 or height % scale or width % scale:
        raise ShapeError(f"pooling scale {scale} does not divide {height}x{width}")
    if scale == 1:
        return f if isinstance(f, RainField) else rate
    shape = (height // scale, scale, width // scale, scale)
    totals = np.where(valid, rate, 0.0).reshape(shape).sum(axis=(1, 3))
    counts = valid.reshape(shape).sum(axis=(1, 3))
    means = np.divide(totals, counts, out=np.zeros_like(totals), where=counts > 0)
    if not isinstance(f, RainField):
        return means
    return RainField(means, counts > 0)


def mse(pred: FieldInput, obs: FieldInput) -> float:
    """Mean squared error over jointly valid pixels."""
    p, p_valid = _split(pred)
    o, o_valid = _split(obs)
    if p.shape != o.shape:
        raise ShapeError(f"forecast shape {p.shape} differs from observation shape {o.shape}")
    both = p_valid & o_valid
    return float(np.mean((p[both] - o[both]) ** 2)) if both.any() else math.nan


def ssim_tensor(
    x: Tensor,
    y: Tensor,
    valid: Optional[np.ndarray] = None,
    window: int = 7,
    data_range: float = 1.0,
) -> Tensor:
    """Mean local SSIM of two (B, 1, H, W) tensors as a differentiable scalar.

    Statistics use a uniform ``window`` x ``window`` box over positions where
    the whole window fits. Windows touching an invalid pixel are left out and
    invalid pixels are zeroed before any statistic, so their values never
    reach the result.

    Returns:
        Scalar tensor; 1.0 (constant) when no window is fully valid

    Raises:
        ConfigError: If the window is even or larger than the image
        ShapeError: If inputs differ in shape
    """
    if x.shape != y.shape:
        raise ShapeError(f"SSIM inputs differ in shape: {x.shape} vs {y.shape}")
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"SSIM expects (B, 1, H, W) tensors, got {x.shape}")
    height, width = x.shape[2], x.shape[3]
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"SSIM window must be a positive odd integer, got {window}")
    if window > height or window > width:
        raise ConfigError(f"SSIM window {window} larger than image {height}x{width}")

    dtype = x.dtype
    kernel = Tensor(np.full((1, 1, window, window), 1.0 / window**2, dtype=dtype))
    if valid is None:
        valid = np.ones(x.shape, dtype=bool)
    mask = valid.astype(dtype).reshape(x.shape)
    x = x * mask
    y = y * mask
    counts = conv2d(Tensor(mask), Tensor(np.ones((1, 1, window, window), dtype=dtype))).data
    full = np.rint(counts) == window * window
    if not full.any():
        return Tensor(np.asarray(1.0, dtype=dtype))

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x = conv2d(x, kernel)
    mu_y = conv2d(y, kernel)
    var_x = conv2d(x * x, kernel) - mu_x * mu_x
    var_y = conv2d(y * y, kernel) - mu_y * mu_y
    cov = conv2d(x * y, kernel) - mu_x * mu_y
    numerator = (mu_x * mu_y * 2.0 + c1) * (cov * 2.0 + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    local = numerator / denominator
    weights = full.astype(dtype) / full.sum()
    return (local * weights).sum()


def ssim(
    a: FieldInput, b: FieldInput, window: int = 7, data_range: float = 32.0
) -> float:
    """Mean local SSIM of two fields over windows valid in both.

    Args:
        a: First field
        b: Second field
        window: Odd box size
        data_range: Dynamic range behind the stabilising constants (mm/h)

    Returns:
        SSIM in [-1, 1], NaN when no window is fully valid
    """
    x, x_valid = _split(a)
    y, y_valid = _split(b)
    if x.shape != y.shape:
        raise ShapeError(f"SSIM inputs differ in shape: {x.shape} vs {y.shape}")
    valid = x_valid & y_valid
    height, width = x.shape
    if window > height or window > width:
        raise ConfigError(f"SSIM window {window} larger than image {height}x{width}")
    counts = conv2d(
        Tensor(valid.astype(np.float64)[None, None]), Tensor(np.ones((1, 1, window, window)))
    ).data
    if not (np.rint(counts) == window * window).any():
        return math.nan
    with no_grad():
        value = ssim_tensor(
            Tensor(x[None, None]), Tensor(y[None, None]), valid[None, None], window, data_range
        )
    return value.item()


def relative_improvement(candidate: float, baseline: float) -> float:
    """``(candidate - baseline) / |baseline|``; NaN when the baseline is 0 or undefined."""
    if math.isnan(candidate) or math.isnan(baseline) or baseline == 0:
        return math.nan
    return (candidate - baseline) / abs(baseline)
