# Filename: run_log.py
# Author: Rich Lewis @RichLewis007
# Description: Run artifacts. Per-epoch CSV run logs and TOML summary files carrying a schema
#              version, written into each run's output directory.

from __future__ import annotations

import tomllib
from collections.abc import Iterable, Mapping
from dataclasses import asdict
from pathlib import Path
from typing import Any, Final

import pandas as pd
import tomli_w

from qssm.workers.trainer import EpochRecord

RUN_LOG_FILENAME: Final[str] = "run_log.csv"
SUMMARY_FILENAME: Final[str] = "summary.toml"
SUMMARY_SCHEMA_VERSION: Final[int] = 1
RUN_LOG_COLUMNS: Final[tuple[str, ...]] = (
    "epoch",
    "train_loss",
    "eval_metric",
    "lr",
    "wall_time",
    "dataset",
)


def run_log_frame(records: Iterable[EpochRecord], *, fingerprint: str) -> pd.DataFrame:
    rows = [asdict(record) | {"dataset": fingerprint} for record in records]
    return pd.DataFrame(rows, columns=list(RUN_LOG_COLUMNS))


def write_run_log(records: Iterable[EpochRecord], path: Path, *, fingerprint: str) -> Path:
    # One row per epoch; floats keep full precision so the lr column is exact.
    path.parent.mkdir(parents=True, exist_ok=True)
    run_log_frame(records, fingerprint=fingerprint).to_csv(path, index=False, float_format="%.17g")
    return path


def read_run_log(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"dataset": str}, float_precision="round_trip")


def _clean(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _clean(v) for k, v in value.items() if v is not None}
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value if v is not None]
    return value


def write_summary(path: Path, summary: Mapping[str, Any]) -> Path:
    # TOML summary; None entries are dropped since TOML has no null.
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"schema_version": SUMMARY_SCHEMA_VERSION} | _clean(summary)
    with path.open("wb") as fh:
        tomli_w.dump(document, fh)
    return path


def read_summary(path: Path) -> dict[str, Any]:
    with path.open("rb") as fh:
        return tomllib.load(fh)


__all__ = [
    "RUN_LOG_COLUMNS",
    "RUN_LOG_FILENAME",
    "SUMMARY_FILENAME",
    "SUMMARY_SCHEMA_VERSION",
    "read_run_log",
    "read_summary",
    "run_log_frame",
    "write_run_log",
    "write_summary",
]
