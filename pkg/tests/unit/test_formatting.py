"""Tests for shared formatting helpers."""

from __future__ import annotations

from qssm.services.formatting import format_bytes, format_elapsed, format_metric


def test_format_bytes_handles_none() -> None:
    assert format_bytes(None, empty="n/a") == "n/a"


def test_format_bytes_scales_units() -> None:
    assert format_bytes(0) == "0.00 B"
    assert format_bytes(614) == "614.00 B"
    assert format_bytes(1024) == "1.00 KB"
    assert format_bytes(1536) == "1.50 KB"


def test_format_bytes_uses_thousand_separators() -> None:
    number, unit = format_bytes(1024 * 1000).split()
    assert number == "1,000.00"
    assert unit == "KB"


def test_format_bytes_supports_integer_precision() -> None:
    assert format_bytes(2456, decimals=0) == "2 KB"


def test_format_elapsed_switches_units() -> None:
    assert format_elapsed(12.34) == "12.3s"
    assert format_elapsed(245) == "4m 05s"
    assert format_elapsed(3723) == "1h 02m 03s"
    assert format_elapsed(-1) == "0.0s"


def test_format_metric_by_kind() -> None:
    assert format_metric("smape", 12.345678) == "smape=12.3457"
    assert format_metric("accuracy", 0.8125) == "accuracy=81.25%"
    assert format_metric("smape", float("nan")) == "smape=n/a"
