"""Image export and on-disk forecast/dataset layouts."""

import re
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from src.core.grid import ForecastEnsemble, RadarSequence, RainField
from src.data.rgrd import read_rgrd, write_rgrd
from src.utils.error_handler import ContractError, MissingStageError
from src.utils.logger import logger

PathLike = Union[str, Path]

_MEMBER_FILE = re.compile(r"^(?P<system>[a-z0-9]+)_m(?P<member>\d+)\.rgrd$")


def to_pgm(f: RainField, rate_ceiling: float = 32.0) -> bytes:
    """8-bit binary PGM (P5) of one field.

    Rates map linearly from [0, rate_ceiling] to [0, 255] and saturate above;
    invalid pixels are written as 0.
    """
    scaled = np.clip(f.rate / rate_ceiling, 0.0, 1.0) * 255.0
    pixels = np.where(f.valid, np.rint(scaled), 0).astype(np.uint8)
    header = f"P5\n{f.width} {f.height}\n255\n".encode("ascii")
    return header + pixels.tobytes(order="C")


def export_pgm(seq: RadarSequence, out_dir: PathLike, rate_ceiling: float = 32.0, stem: str = "frame") -> List[Path]:
    """Write one PGM per frame as ``<stem>_<ttt>.pgm``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, frame in enumerate(seq):
        path = out_dir / f"{stem}_{index:03d}.pgm"
        path.write_bytes(to_pgm(frame, rate_ceiling))
        paths.append(path)
    logger.info(f"Exported {len(paths)} PGM frames to {out_dir}")
    return paths


def write_manifest(path: PathLike, lines: Sequence[str]) -> Path:
    """UTF-8 manifest, one entry per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.writelines(f"{line}\n" for line in lines)
    return path


def read_manifest(path: PathLike) -> List[str]:
    with open(path, "r", encoding="utf-8") as handle:
        return [line.rstrip("\n") for line in handle if line.strip()]


def write_forecast(
    systems: Dict[str, np.ndarray],
    out_dir: PathLike,
    step_minutes: int = 5,
    truth: Optional[RadarSequence] = None,
) -> List[Path]:
    """Write ``<system>_m<s>.rgrd`` per system and member, plus ``truth.rgrd``.

    Args:
        systems: (S, N, H, W) rates per system name
        out_dir: Output directory
        step_minutes: Forecast cadence
        truth: Observed frames over the forecast horizon, if available
    """
    out_dir = Path(out_dir)
    paths = []
    for system, data in systems.items():
        for member, frames in enumerate(data):
            path = out_dir / f"{system}_m{member}.rgrd"
            write_rgrd(RadarSequence.from_arrays(frames, step_minutes=step_minutes), path)
            paths.append(path)
    if truth is not None:
        path = out_dir / "truth.rgrd"
        write_rgrd(truth, path)
        paths.append(path)
    logger.info(f"Wrote {len(paths)} forecast files to {out_dir}")
    return paths


def read_forecast(forecast_dir: PathLike, system: str = "mtldm") -> ForecastEnsemble:
    """Collect the members of one system from a forecast directory.

    Raises:
        MissingStageError: If the directory holds no member of ``system``
        ContractError: If member indices are not 0..S-1
    """
    forecast_dir = Path(forecast_dir)
    found: Dict[int, Path] = {}
    if forecast_dir.is_dir():
        for path in forecast_dir.iterdir():
            match = _MEMBER_FILE.match(path.name)
            if match and match.group("system") == system:
                found[int(match.group("member"))] = path
    if not found:
        raise MissingStageError(str(forecast_dir / f"{system}_m0.rgrd"))
    if sorted(found) != list(range(len(found))):
        raise ContractError(f"{system} members in {forecast_dir} are not numbered 0..{len(found) - 1}")
    return ForecastEnsemble([read_rgrd(found[m]) for m in range(len(found))], system=system)
