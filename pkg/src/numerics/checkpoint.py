"""MTLW parameter checkpoint format.

Layout (little-endian)::

    "MTLW" | u16 version | u32 count | count x entry | u32 shadow count | shadow entries
    entry = u16 name length | UTF-8 name | u8 rank | rank x u32 dim | float32 data

Parameters come first in store order, then EMA shadows in the same layout.
"""

import os
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Tuple, Union

import numpy as np

from src.numerics.optim import ParamStore
from src.utils.error_handler import FormatError, LoadError
from src.utils.logger import logger

MAGIC = b"MTLW"
VERSION = 1


def _write_entries(handle: BinaryIO, entries: Dict[str, np.ndarray]) -> None:
    handle.write(struct.pack("<I", len(entries)))
    for name, value in entries.items():
        encoded = name.encode("utf-8")
        array = np.asarray(value)
        handle.write(struct.pack("<H", len(encoded)))
        handle.write(encoded)
        handle.write(struct.pack("<B", array.ndim))
        handle.write(struct.pack(f"<{array.ndim}I", *array.shape))
        handle.write(array.astype("<f4").tobytes(order="C"))


class _Reader:
    """Cursor over checkpoint bytes that reports the failing offset."""

    def __init__(self, payload: bytes) -> None:
        self.payload = payload
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.payload):
            raise FormatError(f"truncated checkpoint while reading {what}", self.offset)
        chunk = self.payload[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def entries(self) -> Dict[str, np.ndarray]:
        (count,) = self.unpack("<I", "entry count")
        out: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (length,) = self.unpack("<H", "name length")
            start = self.offset
            try:
                name = self.take(length, "name").decode("utf-8")
            except UnicodeDecodeError as e:
                raise FormatError("parameter name is not UTF-8", start, original_error=e)
            (rank,) = self.unpack("<B", "rank")
            dims = self.unpack(f"<{rank}I", "dims") if rank else ()
            size = int(np.prod(dims, dtype=np.int64)) if dims else 1
            data = np.frombuffer(self.take(4 * size, f"data of {name}"), dtype="<f4")
            out[name] = data.reshape(dims).astype(np.float32)
        return out


def save_checkpoint(store: ParamStore, path: Union[str, Path]) -> Path:
    """Write parameters and EMA shadows of a store.

    The file is written next to its destination and moved into place, so a
    reader never sees a partial checkpoint.

    Args:
        store: Parameters to save
        path: Destination file

    Returns:
        Destination path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp = path.with_name(path.name + ".tmp")
    with open(temp, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<H", VERSION))
        _write_entries(handle, {name: t.data for name, t in store.params.items()})
        _write_entries(handle, store.shadows)
    os.replace(temp, path)
    logger.debug(f"Saved {len(store)} parameters and {len(store.shadows)} shadows to {path}")
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """Decode a checkpoint file.

    Returns:
        (parameters, shadows) keyed by name

    Raises:
        FormatError: On bad magic, unknown version or truncated content
    """
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4, "magic") != MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    (version,) = reader.unpack("<H", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    params = reader.entries()
    shadows = reader.entries()
    if reader.offset != len(reader.payload):
        raise FormatError("trailing bytes after checkpoint", reader.offset)
    return params, shadows


def load_into(store: ParamStore, path: Union[str, Path]) -> ParamStore:
    """Fill an already-built store from a checkpoint.

    Nothing is written into the store unless every parameter and shadow matches.

    Raises:
        LoadError: If parameter or shadow names or shapes disagree with the store
    """
    try:
        params, shadows = read_checkpoint(path)
    except OSError as e:
        raise LoadError(f"cannot read checkpoint {path}", original_error=e)
    missing = sorted(set(store.params) - set(params))
    extra = sorted(set(params) - set(store.params))
    if missing or extra:
        raise LoadError(
            f"checkpoint {path} does not match the configured model "
            f"(missing: {missing[:3]}, unexpected: {extra[:3]})"
        )
    for name, value in params.items():
        if store[name].shape != value.shape:
            raise LoadError(f"{path}: {name} has shape {value.shape}, model expects {store[name].shape}")
    unknown = sorted(set(shadows) - set(store.params))
    if unknown:
        raise LoadError(f"checkpoint {path} has shadows for unknown parameters: {unknown[:3]}")
    for name, value in shadows.items():
        if store[name].shape != value.shape:
            raise LoadError(f"{path}: shadow of {name} has shape {value.shape}, model expects {store[name].shape}")
    for name, value in params.items():
        store.params[name].data = value.astype(store.dtype)
    store.shadows = {name: value.astype(store.dtype) for name, value in shadows.items()}
    logger.debug(f"Loaded {len(params)} parameters from {path}")
    return store
