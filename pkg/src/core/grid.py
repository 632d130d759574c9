"""Rain-rate grids, radar sequences and raw-frame decoding."""

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.error_handler import ContractError, GridRangeError, MalformedInputError, ShapeError

NODATA_CODE = 255


class TransferKind(Enum):
    """Raw code to rain-rate mappings."""

    IDENTITY = "identity"
    LINEAR_SCALE = "linear-scale"


@dataclass(frozen=True)
class TransferFunction:
    """Maps raw integer codes to mm/h."""

    kind: TransferKind = TransferKind.IDENTITY
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise MalformedInputError(f"transfer scale must be > 0, got {self.scale}")

    def __call__(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.float32)
        if self.kind is TransferKind.IDENTITY:
            return codes
        return codes * np.float32(self.scale)


class RainField:
    """One H x W grid of rain rate (mm/h) with a validity mask.

    Rates at invalid pixels are stored as 0. Both arrays are read-only.
    """

    __slots__ = ("rate", "valid")

    def __init__(self, rate: np.ndarray, valid: Optional[np.ndarray] = None) -> None:
        """Initialize a field.

        Args:
            rate: (H, W) rain rates in mm/h
            valid: (H, W) boolean mask; all pixels valid when None

        Raises:
            ShapeError: If arrays are not 2-D or disagree in shape
            MalformedInputError: If a valid pixel holds a negative or non-finite rate
        """
        rate = np.array(rate, dtype=np.float32)
        if rate.ndim != 2:
            raise ShapeError(f"rain field must be 2-D, got shape {rate.shape}")
        mask = np.ones(rate.shape, dtype=bool) if valid is None else np.array(valid, dtype=bool)
        if mask.shape != rate.shape:
            raise ShapeError(f"mask shape {mask.shape} differs from rate shape {rate.shape}")
        measured = rate[mask]
        if not np.all(np.isfinite(measured)) or np.any(measured < 0):
            raise MalformedInputError("rain rates must be finite and >= 0 at valid pixels")
        rate[~mask] = 0.0
        rate.flags.writeable = False
        mask.flags.writeable = False
        self.rate = rate
        self.valid = mask

    @classmethod
    def zeros(cls, height: int, width: int) -> "RainField":
        return cls(np.zeros((height, width), dtype=np.float32))

    @property
    def height(self) -> int:
        return int(self.rate.shape[0])

    @property
    def width(self) -> int:
        return int(self.rate.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def valid_count(self) -> int:
        return int(self.valid.sum())

    def invalid_count(self) -> int:
        return int(self.valid.size - self.valid.sum())

    def with_rate(self, rate: np.ndarray) -> "RainField":
        """Same mask, new rates."""
        return RainField(rate, self.valid)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RainField):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.rate.tobytes() == other.rate.tobytes()
            and bool(np.array_equal(self.valid, other.valid))
        )

    def __hash__(self) -> int:
        return hash((self.shape, self.rate.tobytes(), self.valid.tobytes()))

    def __repr__(self) -> str:
        return f"RainField({self.height}x{self.width}, valid={self.valid_count()})"


class RadarSequence:
    """Ordered frames of uniform shape at a fixed cadence."""

    def __init__(self, frames: Sequence[RainField], step_minutes: int = 5) -> None:
        """Initialize a sequence.

        Raises:
            ContractError: If there are no frames or the cadence is not positive
            ShapeError: If frames differ in shape
        """
        frames = tuple(frames)
        if not frames:
            raise ContractError("a radar sequence needs at least one frame")
        if step_minutes < 1:
            raise ContractError(f"step_minutes must be positive, got {step_minutes}")
        shape = frames[0].shape
        for index, frame in enumerate(frames):
            if frame.shape != shape:
                raise ShapeError(f"frame {index} has shape {frame.shape}, expected {shape}")
        self.frames: Tuple[RainField, ...] = frames
        self.step_minutes = int(step_minutes)

    @classmethod
    def from_arrays(
        cls, rates: np.ndarray, valid: Optional[np.ndarray] = None, step_minutes: int = 5
    ) -> "RadarSequence":
        """Build a sequence from (T, H, W) rate and mask stacks."""
        rates = np.asarray(rates)
        if rates.ndim != 3:
            raise ShapeError(f"expected (T, H, W) rates, got shape {rates.shape}")
        masks = np.ones(rates.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        return cls([RainField(r, m) for r, m in zip(rates, masks)], step_minutes)

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width

    def rates(self) -> np.ndarray:
        """(T, H, W) float32 rate stack."""
        return np.stack([f.rate for f in self.frames])

    def masks(self) -> np.ndarray:
        """(T, H, W) validity stack."""
        return np.stack([f.valid for f in self.frames])

    def as_batch(self, dtype: type = np.float32) -> Tuple[np.ndarray, np.ndarray]:
        """Rates and masks shaped (T, 1, H, W) for the networks."""
        return self.rates().astype(dtype)[:, None], self.masks()[:, None]

    def lead_minutes(self) -> List[int]:
        """Lead labels T+step ... T+len*step for a forecast sequence."""
        return [self.step_minutes * (i + 1) for i in range(len(self.frames))]

    def slice(self, start: int, stop: int) -> "RadarSequence":
        if not 0 <= start < stop <= len(self.frames):
            raise GridRangeError(f"frame range [{start}, {stop}) outside 0..{len(self.frames)}")
        return RadarSequence(self.frames[start:stop], self.step_minutes)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[RainField]:
        return iter(self.frames)

    def __getitem__(self, index: int) -> RainField:
        return self.frames[index]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RadarSequence):
            return NotImplemented
        return self.step_minutes == other.step_minutes and self.frames == other.frames

    def __repr__(self) -> str:
        return f"RadarSequence(T={len(self)}, {self.height}x{self.width}, step={self.step_minutes}min)"


class ForecastEnsemble:
    """S sampled realizations of an N-frame forecast for one system."""

    def __init__(self, members: Sequence[RadarSequence], system: str = "mtldm") -> None:
        members = tuple(members)
        if not members:
            raise ContractError("an ensemble needs at least one member")
        first = members[0]
        for index, member in enumerate(members):
            if len(member) != len(first):
                raise ContractError(f"member {index} has {len(member)} frames, expected {len(first)}")
            if (member.height, member.width) != (first.height, first.width):
                raise ShapeError(f"member {index} frame shape differs from member 0")
        self.members = members
        self.system = system

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def horizon(self) -> int:
        return len(self.members[0])

    @property
    def step_minutes(self) -> int:
        return self.members[0].step_minutes

    def at_lead(self, lead_index: int) -> List[RainField]:
        """Every member's field at one lead (0-based)."""
        return [member[lead_index] for member in self.members]

    def mean_field(self, lead_index: int) -> RainField:
        """Pixelwise member mean at one lead, valid where every member is valid."""
        fields = self.at_lead(lead_index)
        valid = np.logical_and.reduce([f.valid for f in fields])
        return RainField(np.mean([f.rate for f in fields], axis=0), valid)


def decode_raw_frame(
    codes: np.ndarray,
    tf: Optional[TransferFunction] = None,
    nodata_code: int = NODATA_CODE,
) -> RainField:
    """Decode an 8-bit code grid into a rain field.

    Args:
        codes: (H, W) integer grid in [0, 255]
        tf: Code-to-rate mapping (identity when None)
        nodata_code: Code marking unmeasured pixels

    Returns:
        Field with ``valid=False`` and rate 0 at no-data pixels

    Raises:
        MalformedInputError: If any code lies outside [0, 255]
    """
    codes = np.asarray(codes)
    if not np.issubdtype(codes.dtype, np.integer):
        if not np.all(np.isfinite(codes)) or np.any(codes != np.round(codes)):
            raise MalformedInputError("raw frame codes must be integers")
    if codes.size and (codes.min() < 0 or codes.max() > 255):
        raise MalformedInputError(
            f"raw frame codes must lie in [0, 255], found [{codes.min()}, {codes.max()}]"
        )
    valid = codes != nodata_code
    rates = (tf or TransferFunction())(np.where(valid, codes, 0))
    return RainField(rates, valid)


def crop(seq: RadarSequence, top: int, left: int, size: int) -> RadarSequence:
    """Cut the same size x size window out of every frame.

    Raises:
        GridRangeError: If the window leaves the frame
    """
    if size < 1 or top < 0 or left < 0 or top + size > seq.height or left + size > seq.width:
        raise GridRangeError(
            f"crop window top={top} left={left} size={size} outside {seq.height}x{seq.width} frame"
        )
    window = (slice(top, top + size), slice(left, left + size))
    return RadarSequence(
        [RainField(f.rate[window], f.valid[window]) for f in seq.frames], seq.step_minutes
    )


FieldLike = Union[RainField, np.ndarray]


def as_field(value: FieldLike) -> RainField:
    return value if isinstance(value, RainField) else RainField(value)
