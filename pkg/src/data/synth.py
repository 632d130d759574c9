"""Synthetic storms: advected, growing or decaying Gaussian rain cells."""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from src.core.grid import RadarSequence
from src.utils.error_handler import ConfigError, ContractError
from src.utils.logger import logger

CONTEXT_FRAMES = 4
HORIZON_FRAMES = 16


@dataclass(frozen=True)
class StormCell:
    """One Gaussian cell.

    ``center`` and ``velocity`` are (x, y) = (column, row) in pixels and
    pixels per frame. Intensity at frame t is ``peak * exp(growth * t)``.
    """

    center: Tuple[float, float]
    velocity: Tuple[float, float]
    peak: float
    radius: float
    growth: float = 0.0

    def __post_init__(self) -> None:
        if not self.peak > 0:
            raise ConfigError(f"cell peak rate must be > 0, got {self.peak}")
        if not self.radius > 0:
            raise ConfigError(f"cell radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class StormSpec:
    """A synthetic scene: cells, length, square frame size and noise seed."""

    cells: Tuple[StormCell, ...] = ()
    frames: int = 20
    size: int = 64
    seed: int = 0
    noise: float = 0.0
    step_minutes: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "cells", tuple(self.cells))
        if self.frames < 1 or self.size < 1:
            raise ConfigError(f"frames and size must be >= 1, got {self.frames}, {self.size}")
        if self.noise < 0:
            raise ConfigError("noise level must be >= 0")


@dataclass(frozen=True)
class SampleWindow:
    """Context frames immediately followed by target frames."""

    context: RadarSequence
    target: RadarSequence
    start: int = 0


def generate(spec: StormSpec) -> RadarSequence:
    """Render a storm spec into a fully valid radar sequence.

    Frame t is the sum over cells of ``peak * g(t) * exp(-d^2 / 2r^2)``
    with each centre advected by ``velocity * t``.
    """
    rows, cols = np.mgrid[0 : spec.size, 0 : spec.size].astype(np.float64)
    rng = np.random.default_rng(spec.seed)
    frames = np.zeros((spec.frames, spec.size, spec.size), dtype=np.float64)
    for t in range(spec.frames):
        for cell in spec.cells:
            cx = cell.center[0] + cell.velocity[0] * t
            cy = cell.center[1] + cell.velocity[1] * t
            d2 = (cols - cx) ** 2 + (rows - cy) ** 2
            frames[t] += cell.peak * np.exp(cell.growth * t) * np.exp(-d2 / (2 * cell.radius**2))
        if spec.noise:
            frames[t] = np.maximum(frames[t] + spec.noise * rng.standard_normal(frames[t].shape), 0.0)
    return RadarSequence.from_arrays(frames.astype(np.float32), step_minutes=spec.step_minutes)


def random_spec(
    seed: int,
    frames: int = 20,
    size: int = 64,
    max_cells: int = 4,
    step_minutes: int = 5,
) -> StormSpec:
    """Draw a scene of one to ``max_cells`` moving cells with peaks of 6-20 mm/h.

    Args:
        seed: Seed for the draw (also used as the scene's noise seed)
        frames: Sequence length
        size: Frame edge length
        max_cells: Upper bound on the number of cells
        step_minutes: Cadence written into the sequence

    Returns:
        Storm specification
    """
    rng = np.random.default_rng(seed)
    count = int(rng.integers(1, max_cells + 1))
    cells = []
    for _ in range(count):
        radius = float(rng.uniform(size / 16, size / 6))
        cells.append(
            StormCell(
                center=(float(rng.uniform(0.2, 0.8) * size), float(rng.uniform(0.2, 0.8) * size)),
                velocity=(float(rng.uniform(-1.0, 1.0)), float(rng.uniform(-1.0, 1.0))),
                peak=float(rng.uniform(6.0, 20.0)),
                radius=radius,
                growth=float(rng.uniform(-0.04, 0.04)),
            )
        )
    return StormSpec(tuple(cells), frames=frames, size=size, seed=seed, step_minutes=step_minutes)


def window(
    seq: RadarSequence,
    stride: int = 1,
    context: int = CONTEXT_FRAMES,
    horizon: int = HORIZON_FRAMES,
) -> List[SampleWindow]:
    """Cut (context, target) windows at a stride.

    Raises:
        ContractError: If the sequence is shorter than ``context + horizon``
    """
    span = context + horizon
    if stride < 1:
        raise ContractError(f"window stride must be >= 1, got {stride}")
    if len(seq) < span:
        raise ContractError(f"sequence of {len(seq)} frames is shorter than {span}")
    windows = [
        SampleWindow(seq.slice(start, start + context), seq.slice(start + context, start + span), start)
        for start in range(0, len(seq) - span + 1, stride)
    ]
    logger.debug(f"Cut {len(windows)} windows from {len(seq)} frames")
    return windows
