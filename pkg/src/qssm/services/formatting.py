# Filename: formatting.py
# Author: Rich Lewis @RichLewis007
# Description: Formatting helpers for console output. Byte counts for the memory report,
#              elapsed times for training runs and metric values for summaries.

from __future__ import annotations

import math
from typing import Final

_SIZE_UNITS: Final[tuple[str, ...]] = ("B", "KB", "MB", "GB", "TB", "PB", "EB")


def format_bytes(
    num_bytes: int | float | None,
    *,
    empty: str = "",
    decimals: int = 2,
) -> str:
    """Return a human-friendly string for a byte count.

    The result always includes thousands separators and two decimal places,
    using binary multiples (powers of 1024) up to exabytes.
    """
    if num_bytes is None:
        return empty

    value = float(max(num_bytes, 0))
    decimals = max(decimals, 0)

    for unit in _SIZE_UNITS[:-1]:
        if value < 1024:
            return f"{value:,.{decimals}f} {unit}"
        value /= 1024
    return f"{value:,.{decimals}f} {_SIZE_UNITS[-1]}"


def format_elapsed(seconds: float) -> str:
    # "12.3s" under a minute, "4m 05s" above.
    seconds = max(seconds, 0.0)
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, secs = divmod(int(round(seconds)), 60)
    if minutes < 60:
        return f"{minutes}m {secs:02d}s"
    hours, minutes = divmod(minutes, 60)
    return f"{hours}h {minutes:02d}m {secs:02d}s"


def format_metric(name: str, value: float) -> str:
    if math.isnan(value):
        return f"{name}=n/a"
    if name == "accuracy":
        return f"{name}={value * 100:.2f}%"
    return f"{name}={value:.4f}"


__all__ = ["format_bytes", "format_elapsed", "format_metric"]
