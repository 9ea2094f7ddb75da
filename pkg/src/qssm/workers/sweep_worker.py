# Filename: sweep_worker.py
# Author: Rich Lewis @RichLewis007
# Description: Parameter sweep over Mackey-Glass delays, quantization configs and seeds. Runs
#              every cell as an isolated QAT run (optionally in a process pool), reports
#              progress, supports cancellation and builds the per-cell and aggregate tables.

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import Future, ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from time import monotonic
from typing import Final

import pandas as pd
import torch

from qssm.errors import QssmError
from qssm.models.mackey_glass import MackeyGlassConfig
from qssm.models.quant_config import parse_quant_config
from qssm.models.serialization import save_model
from qssm.models.tasks import build_forecast_task
from qssm.services.config import ExperimentConfig
from qssm.services.run_log import RUN_LOG_FILENAME, write_run_log

from .trainer import evaluate, train_qat

logger = logging.getLogger(__name__)

CELL_COLUMNS: Final[tuple[str, ...]] = (
    "tau",
    "quant",
    "seed",
    "smape",
    "converged",
    "status",
    "params",
)
AGGREGATE_COLUMNS: Final[tuple[str, ...]] = ("tau", "quant", "mean_smape", "n_converged", "n_seeds")

ProgressCallback = Callable[[int, int, str], None]  # done, total, last cell label


@dataclass(frozen=True, slots=True)
class SweepCell:
    tau: float
    quant: str
    seed: int

    @property
    def label(self) -> str:
        return f"tau={self.tau:g} {self.quant} seed={self.seed}"

    @property
    def dirname(self) -> str:
        return f"tau{self.tau:g}_{self.quant}_seed{self.seed}"


@dataclass(frozen=True, slots=True)
class CellResult:
    cell: SweepCell
    smape: float
    converged: bool
    status: str
    params: int = 0
    error: str = ""


@dataclass(slots=True)
class SweepStats:
    # Aggregate statistics for a sweep run.

    total: int = 0
    done: int = 0
    failed: int = 0
    start_time: float = field(default_factory=monotonic)
    end_time: float | None = None

    @property
    def duration(self) -> float | None:
        # Return the sweep duration in seconds, if the sweep has finished.
        if self.end_time is None:
            return None
        return self.end_time - self.start_time


@dataclass(slots=True)
class SweepPayload:
    # Result tables emitted on sweep completion.

    cells: pd.DataFrame
    aggregate: pd.DataFrame
    stats: SweepStats


def sweep_cells(taus: Iterable[float], quants: Iterable[str], seeds: Iterable[int]) -> list[SweepCell]:
    # Cross product in tau, quant, seed order; quant names are validated up front.
    quant_list = [parse_quant_config(name).name for name in quants]
    seed_list = list(seeds)
    return [
        SweepCell(tau=float(tau), quant=quant, seed=seed)
        for tau in taus
        for quant in quant_list
        for seed in seed_list
    ]


def _cell_series(cfg: MackeyGlassConfig, tau: float) -> MackeyGlassConfig:
    # The transient must still cover the longest delay.
    lag = math.ceil(tau / cfg.dt)
    return replace(cfg, tau=tau, transient=max(cfg.transient, lag))


def run_cell(cell: SweepCell, config: ExperimentConfig, out_dir: Path | None = None) -> CellResult:
    """Train and score one sweep cell.

    The series uses the configured Mackey-Glass seed; the model and the
    batch order use the cell seed. Failures are returned as a failed row.
    """
    cell_dir = out_dir / cell.dirname if out_dir is not None else None
    try:
        data = build_forecast_task(
            _cell_series(config.mackey_glass, cell.tau),
            config.forecast.context_len,
            config.forecast.horizon,
            stride=config.forecast.stride,
        )
        train_cfg = replace(config.train, quant=cell.quant, seed=cell.seed)
        result = train_qat(
            train_cfg,
            data,
            dims=config.model.dims(),
            ops=config.ops,
            readout=config.model.readout,
            scan=config.model.scan,
            out_dir=cell_dir,
        )
        metric = (
            evaluate(result.model, data.split(train_cfg.eval_split))
            if result.converged
            else float("nan")
        )
        if cell_dir is not None:
            write_run_log(result.history, cell_dir / RUN_LOG_FILENAME, fingerprint=data.fingerprint)
            if result.converged:
                save_model(result.model, cell_dir / "model.qssm")
        return CellResult(
            cell=cell,
            smape=metric,
            converged=result.converged,
            status=result.status,
            params=result.model.num_parameters(),
        )
    except (QssmError, ValueError, OSError) as exc:
        logger.warning("Sweep cell %s failed: %s", cell.label, exc)
        return CellResult(cell=cell, smape=float("nan"), converged=False, status="failed", error=str(exc))


def _init_process() -> None:
    # One intra-op thread per worker process keeps the pool from oversubscribing cores.
    torch.set_num_threads(1)


def cells_frame(results: Sequence[CellResult]) -> pd.DataFrame:
    rows = [
        {
            "tau": r.cell.tau,
            "quant": r.cell.quant,
            "seed": r.cell.seed,
            "smape": r.smape,
            "converged": r.converged,
            "status": r.status,
            "params": r.params,
        }
        for r in results
    ]
    return pd.DataFrame(rows, columns=list(CELL_COLUMNS))


def aggregate_frame(cells: pd.DataFrame) -> pd.DataFrame:
    # Mean sMAPE over the converged seeds of every (tau, quant) pair, in sweep order.
    scored = cells.assign(converged_smape=cells["smape"].where(cells["converged"].astype(bool)))
    grouped = scored.groupby(["tau", "quant"], sort=False).agg(
        mean_smape=("converged_smape", "mean"),
        n_converged=("converged", "sum"),
        n_seeds=("seed", "count"),
    )
    out = grouped.reset_index()
    out["n_converged"] = out["n_converged"].astype(int)
    return out[list(AGGREGATE_COLUMNS)]


class SweepWorker:
    # Runs every cell of a sweep and reports progress after each one.

    def __init__(
        self,
        *,
        config: ExperimentConfig,
        cells: Sequence[SweepCell],
        out_dir: Path | None = None,
        workers: int = 1,
        progress: ProgressCallback | None = None,
    ) -> None:
        if workers < 1:
            raise ValueError(f"workers must be positive, got {workers}")
        self._config = config
        self._cells = list(cells)
        self._out_dir = out_dir
        self._workers = workers
        self._progress = progress
        self._cancel_requested = False

    def request_cancel(self) -> None:
        # Signal the worker to stop before the next cell starts.
        self._cancel_requested = True

    # run returns None when the sweep is cancelled.

    def run(self) -> SweepPayload | None:
        stats = SweepStats(total=len(self._cells))
        if self._workers == 1:
            results = self._run_inline(stats)
        else:
            results = self._run_pool(stats)
        if results is None:
            logger.info("Sweep cancelled after %d of %d cells", stats.done, stats.total)
            return None

        stats.end_time = monotonic()
        cells = cells_frame(results)
        logger.info(
            "Sweep finished: %d cells, %d failed, %.1fs",
            stats.total,
            stats.failed,
            stats.duration or 0.0,
        )
        return SweepPayload(cells=cells, aggregate=aggregate_frame(cells), stats=stats)

    # Internal helpers -------------------------------------------------

    def _record(self, stats: SweepStats, result: CellResult) -> None:
        stats.done += 1
        if result.status == "failed":
            stats.failed += 1
        logger.info(
            "Cell %s: %s smape=%.4g (%d/%d)",
            result.cell.label,
            result.status,
            result.smape,
            stats.done,
            stats.total,
        )
        if self._progress is not None:
            self._progress(stats.done, stats.total, result.cell.label)

    def _run_inline(self, stats: SweepStats) -> list[CellResult] | None:
        results = []
        for cell in self._cells:
            if self._cancel_requested:
                return None
            result = run_cell(cell, self._config, self._out_dir)
            results.append(result)
            self._record(stats, result)
        return results

    def _run_pool(self, stats: SweepStats) -> list[CellResult] | None:
        # Results are stored by cell index so the table order never depends on scheduling.
        slots: list[CellResult | None] = [None] * len(self._cells)
        with ProcessPoolExecutor(max_workers=self._workers, initializer=_init_process) as pool:
            futures: dict[Future[CellResult], int] = {
                pool.submit(run_cell, cell, self._config, self._out_dir): index
                for index, cell in enumerate(self._cells)
            }
            for future in as_completed(futures):
                if self._cancel_requested:
                    pool.shutdown(wait=True, cancel_futures=True)
                    return None
                result = future.result()
                slots[futures[future]] = result
                self._record(stats, result)
        return [result for result in slots if result is not None]


__all__ = [
    "AGGREGATE_COLUMNS",
    "CELL_COLUMNS",
    "CellResult",
    "SweepCell",
    "SweepPayload",
    "SweepStats",
    "SweepWorker",
    "aggregate_frame",
    "cells_frame",
    "run_cell",
    "sweep_cells",
]
