"""Threshold decomposition of rain fields into intensity bands."""

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from src.core.grid import RadarSequence, RainField
from src.utils.error_handler import ConfigError, ShapeError

DEFAULT_THRESHOLDS = (1.0, 4.0, 8.0)


@dataclass(frozen=True)
class ThresholdSpec:
    """Strictly increasing positive thresholds; n thresholds give n + 1 bands."""

    thresholds: Tuple[float, ...] = DEFAULT_THRESHOLDS

    def __post_init__(self) -> None:
        values = tuple(float(t) for t in self.thresholds)
        object.__setattr__(self, "thresholds", values)
        if not values:
            raise ConfigError("at least one threshold is required")
        if any(not math.isfinite(t) or t <= 0 for t in values):
            raise ConfigError(f"thresholds must be finite and > 0, got {values}")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError(f"thresholds must be strictly increasing, got {values}")

    @property
    def band_count(self) -> int:
        return len(self.thresholds) + 1

    def interval(self, band: int) -> Tuple[float, float]:
        """Half-open [lo, hi) of one band; band 0 starts at 0, the last ends at inf."""
        edges = (0.0,) + self.thresholds + (math.inf,)
        return edges[band], edges[band + 1]

    def intervals(self) -> List[Tuple[float, float]]:
        return [self.interval(k) for k in range(self.band_count)]

    def band_of(self, rate: np.ndarray) -> np.ndarray:
        """Band index of each rate (``searchsorted`` with the lower edge inclusive)."""
        return np.searchsorted(np.asarray(self.thresholds, dtype=np.float32), rate, side="right")


@dataclass(frozen=True)
class BandSet:
    """Per-band sub-fields of one source field."""

    spec: ThresholdSpec
    bands: Tuple[RainField, ...]

    def __post_init__(self) -> None:
        if len(self.bands) != self.spec.band_count:
            raise ShapeError(f"{self.spec.band_count} bands expected, got {len(self.bands)}")
        shape = self.bands[0].shape
        for band in self.bands:
            if band.shape != shape:
                raise ShapeError(f"band shapes differ: {band.shape} vs {shape}")


def decompose(f: RainField, spec: ThresholdSpec) -> BandSet:
    """Split a field into disjoint intensity bands.

    Band k keeps the source rate where it lies in ``[Th_k, Th_k+1)`` and is 0
    elsewhere. Every band carries the source mask.
    """
    index = spec.band_of(f.rate)
    zero = np.zeros_like(f.rate)
    bands = tuple(
        RainField(np.where((index == k) & f.valid, f.rate, zero), f.valid)
        for k in range(spec.band_count)
    )
    return BandSet(spec, bands)


def recompose(b: BandSet) -> RainField:
    """Pixelwise sum of the bands, carrying band 0's mask."""
    total = np.zeros_like(b.bands[0].rate)
    for band in b.bands:
        total = total + band.rate
    return RainField(total, b.bands[0].valid)


def exceedance_mask(f: RainField, thr: float) -> np.ndarray:
    """True at valid pixels with ``rate >= thr``."""
    if thr < 0:
        raise ConfigError(f"exceedance threshold must be >= 0, got {thr}")
    return f.valid & (f.rate >= np.float32(thr))


def band_mask(f: RainField, lo: float, hi: float) -> np.ndarray:
    """True at valid pixels with ``lo <= rate < hi``."""
    return f.valid & (f.rate >= np.float32(lo)) & (f.rate < np.float32(hi))


def decompose_sequence(seq: RadarSequence, spec: ThresholdSpec) -> List[RadarSequence]:
    """Band sequences of a whole radar sequence, one per band."""
    per_frame: Sequence[BandSet] = [decompose(frame, spec) for frame in seq]
    return [
        RadarSequence([bands.bands[k] for bands in per_frame], seq.step_minutes)
        for k in range(spec.band_count)
    ]
