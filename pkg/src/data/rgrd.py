"""RGRD raster sequence format.

Layout, little-endian::

    "RGRD" | u16 version=1 | u32 T | u32 H | u32 W | u8 step_minutes
    T*H*W float32 rates (row-major, frame by frame) | T*H*W u8 mask (1 = valid)
"""

import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from src.core.grid import RadarSequence
from src.utils.error_handler import ContractError, FormatError, MalformedInputError
from src.utils.logger import logger

MAGIC = b"RGRD"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIB")

Destination = Union[str, Path, BinaryIO]


def encode_rgrd(seq: RadarSequence) -> bytes:
    """Serialise a sequence to RGRD bytes."""
    if not 1 <= seq.step_minutes <= 255:
        raise ContractError(f"step_minutes {seq.step_minutes} does not fit in one byte")
    header = _HEADER.pack(MAGIC, VERSION, len(seq), seq.height, seq.width, seq.step_minutes)
    rates = seq.rates().astype("<f4").tobytes(order="C")
    masks = seq.masks().astype(np.uint8).tobytes(order="C")
    return header + rates + masks


def decode_rgrd(payload: bytes) -> RadarSequence:
    """Parse RGRD bytes.

    Raises:
        FormatError: On bad magic, unknown version, zero or oversized dims,
            truncated payload, trailing bytes or invalid mask bytes
    """
    if len(payload) < _HEADER.size:
        raise FormatError("truncated RGRD header", len(payload))
    magic, version, frames, height, width, step = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported RGRD version {version}", 4)
    if frames == 0 or height == 0 or width == 0:
        raise FormatError(f"empty dimensions T={frames} H={height} W={width}", 6)
    if step == 0:
        raise FormatError("step_minutes must be positive", 18)
    cells = frames * height * width
    expected = _HEADER.size + 5 * cells
    if expected > len(payload):
        # Dimension overflow and plain truncation both surface here.
        raise FormatError(
            f"payload holds {len(payload)} bytes but dimensions T={frames} H={height} W={width} "
            f"need {expected}",
            len(payload),
        )
    if expected < len(payload):
        raise FormatError("trailing bytes after mask block", expected)

    rate_start = _HEADER.size
    mask_start = rate_start + 4 * cells
    rates = np.frombuffer(payload, dtype="<f4", count=cells, offset=rate_start)
    raw_mask = np.frombuffer(payload, dtype=np.uint8, count=cells, offset=mask_start)
    bad = np.flatnonzero(raw_mask > 1)
    if bad.size:
        raise FormatError(f"mask byte {raw_mask[bad[0]]} is not 0 or 1", mask_start + int(bad[0]))
    try:
        return RadarSequence.from_arrays(
            rates.reshape(frames, height, width).astype(np.float32),
            raw_mask.reshape(frames, height, width).astype(bool),
            step,
        )
    except MalformedInputError as e:
        raise FormatError("rate block holds negative or non-finite values", rate_start, original_error=e)


def write_rgrd(seq: RadarSequence, destination: Destination) -> None:
    """Write a sequence to a path or binary stream."""
    payload = encode_rgrd(seq)
    if isinstance(destination, (str, Path)):
        path = Path(destination)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
        logger.debug(f"Wrote {len(seq)} frames to {path}")
    else:
        destination.write(payload)


def read_rgrd(source: Destination) -> RadarSequence:
    """Read a sequence from a path or binary stream."""
    if isinstance(source, (str, Path)):
        payload = Path(source).read_bytes()
    else:
        payload = source.read()
    return decode_rgrd(payload)
