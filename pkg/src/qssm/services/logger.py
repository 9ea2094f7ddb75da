# Filename: logger.py
# Author: Rich Lewis @RichLewis007
# Description: Logging configuration utilities. Sets up rotating file and console handlers
#              for every qssm command, with the log directory overridable per run.

from __future__ import annotations

import logging
import logging.handlers
from pathlib import Path
from typing import Final

from .config import app_dirs

LOG_FILENAME: Final[str] = "qssm.log"
LOG_FORMAT: Final[str] = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
LOG_DATEFMT: Final[str] = "%Y-%m-%d %H:%M:%S"


def _get_log_path(log_dir: Path | None = None) -> Path:
    # Return the path to the rotating log file, creating folders as needed.
    path = log_dir if log_dir is not None else Path(app_dirs().user_log_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path / LOG_FILENAME


def configure(*, log_level: str = "INFO", log_dir: Path | None = None) -> Path:
    # Configure root logger with rotating file and console handlers; returns the log file path.
    root = logging.getLogger()
    root.setLevel(logging.DEBUG)

    log_path = _get_log_path(log_dir)
    file_handler = logging.handlers.RotatingFileHandler(
        log_path,
        maxBytes=2 * 1024 * 1024,
        backupCount=5,
        encoding="utf-8",
    )
    formatter = logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT)
    file_handler.setFormatter(formatter)
    file_handler.setLevel(logging.DEBUG)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    console_handler.setLevel(getattr(logging, log_level.upper(), logging.INFO))

    # Avoid duplicate handlers when reconfiguring.
    for handler in root.handlers:
        handler.close()
    root.handlers.clear()
    root.addHandler(file_handler)
    root.addHandler(console_handler)
    return log_path


__all__ = ["LOG_FILENAME", "configure"]
