"""Logging configuration module."""

import logging
import sys
from pathlib import Path
from typing import Mapping, Optional

from src.utils.config import config


def setup_logger(
    name: str = "nowcast", log_file: Optional[str] = None, level: Optional[str] = None
) -> logging.Logger:
    """Set up and configure logger.

    Args:
        name: Logger name
        log_file: Optional log file path
        level: Level name; falls back to the configured LOG_LEVEL

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, (level or config.log_level).upper(), logging.INFO))

    # Remove existing handlers
    logger.handlers.clear()

    # Console handler
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(logging.INFO)
    console_format = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    console_handler.setFormatter(console_format)
    logger.addHandler(console_handler)

    # File handler (if specified)
    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_path, encoding="utf-8")
        file_handler.setLevel(logging.DEBUG)
        file_format = logging.Formatter(
            "%(asctime)s - %(name)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )
        file_handler.setFormatter(file_format)
        logger.addHandler(file_handler)

    return logger


def progress_record(step: int, loss: float, terms: Mapping[str, float]) -> str:
    """Format one training progress record.

    Args:
        step: 1-based optimisation step
        loss: Total loss value
        terms: Named loss terms in emission order

    Returns:
        Line ``step=<k> loss=<v> <term>=<v> ...``
    """
    parts = [f"step={step}", f"loss={loss:.6g}"]
    parts.extend(f"{name}={value:.6g}" for name, value in terms.items())
    return " ".join(parts)


# Global logger instance
logger = setup_logger(log_file=config.log_file)
