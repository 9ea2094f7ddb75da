# Filename: cli.py
# Author: Rich Lewis @RichLewis007
# Description: Command-line interface for qssm. Generates Mackey-Glass series, trains (QAT),
#              quantizes (PTQ), fine-tunes (QAFT), evaluates, sweeps and ablates quantized S5
#              models. Every command writes its fully resolved config.toml next to its outputs.

from __future__ import annotations

import argparse
import logging
import math
import sys
from collections.abc import Callable, Sequence
from dataclasses import replace
from pathlib import Path
from time import monotonic
from typing import Any, Final

import pandas as pd

from . import __version__
from .errors import (
    ConfigError,
    GenerationError,
    InsufficientDataError,
    ModelFormatError,
    QuantConfigError,
    ShapeMismatchError,
)
from .models.mackey_glass import generate_mackey_glass
from .models.network import memory_report
from .models.quant_config import GRAMMAR, TABLE_CONFIGS, parse_quant_config
from .models.serialization import load_model, save_model
from .models.tasks import TaskData, build_forecast_task, build_toy_task
from .services import logger as logger_service
from .services.config import (
    CONFIG_FILENAME,
    ABLATION_MODES,
    TASK_NAMES,
    ExperimentConfig,
    ensure_app_dirs,
    load_experiment_config,
    save_experiment_config,
)
from .services.formatting import format_bytes, format_elapsed, format_metric
from .services.run_log import RUN_LOG_FILENAME, SUMMARY_FILENAME, write_run_log, write_summary
from .workers.sweep_worker import SweepWorker, sweep_cells
from .workers.trainer import (
    ABLATION_ROWS,
    TrainResult,
    evaluate,
    evaluate_ptq,
    finetune_qaft,
    metric_name,
    ptq_ablation,
    qat_ablation,
    train_qat,
)

logger = logging.getLogger(__name__)

EXIT_OK: Final[int] = 0
EXIT_USAGE: Final[int] = 2
EXIT_NOT_CONVERGED: Final[int] = 3
EXIT_IO: Final[int] = 4

MODEL_FILENAME: Final[str] = "model.qssm"
SERIES_FILENAME: Final[str] = "series.csv"


def _quant_name(value: str) -> str:
    # argparse type: validate against the naming grammar and return the canonical name.
    try:
        return parse_quant_config(value).name
    except QuantConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _csv_list(kind: Callable[[str], Any]) -> Callable[[str], list[Any]]:
    def parse(value: str) -> list[Any]:
        items = [item.strip() for item in value.split(",") if item.strip()]
        if not items:
            raise argparse.ArgumentTypeError("expected a comma-separated list")
        try:
            return [kind(item) for item in items]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return parse


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Load an experiment config.toml.")
    common.add_argument("--out", type=Path, help="Output directory for this command.")
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Console log level.",
    )
    common.add_argument("--log-dir", type=Path, help="Directory for qssm.log.")
    common.add_argument("--quiet", action="store_true", help="Disable progress bars.")
    return common


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--task", choices=TASK_NAMES, help="Task to train or evaluate on.")
    parser.add_argument("--tau", type=float, help="Mackey-Glass delay.")


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", type=int, help="Training epochs.")
    parser.add_argument("--lr", type=float, help="Learning rate.")
    parser.add_argument("--batch-size", type=int, help="Batch size.")
    parser.add_argument("--seed", type=int, help="Model and batch-order seed.")
    parser.add_argument("--checkpoint", choices=["best", "final"], help="Checkpoint selection.")
    parser.add_argument("--eval-split", choices=["train", "val", "test"], help="Split scored per epoch.")


def build_parser() -> argparse.ArgumentParser:
    # Create and configure the command-line argument parser.
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="qssm",
        description="Quantized S5 state-space models: QAT, PTQ and QAFT experiments.",
        epilog=f"Quantization names: {GRAMMAR}",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="Generate a Mackey-Glass series.")
    gen.add_argument("--tau", type=float, help="Delay in time units (0..100).")
    gen.add_argument("--steps", type=int, help="Output length.")
    gen.add_argument("--seed", type=int, help="Seed of the random initial history.")
    gen.add_argument("--dt", type=float, help="Euler step.")
    gen.add_argument("--transient", type=int, help="Discarded warmup steps.")

    train = sub.add_parser("train", parents=[common], help="Quantization-aware training.")
    _add_data_flags(train)
    _add_train_flags(train)
    train.add_argument("--quant", type=_quant_name, help="Quantization config, e.g. W4A8SSM8.")
    train.add_argument("--quantize-gradients", action="store_true", default=None)

    ptq = sub.add_parser("ptq", parents=[common], help="Post-training quantization of an FP model.")
    ptq.add_argument("--model", type=Path, help="Full-precision model file.")
    ptq.add_argument("--quant", type=_quant_name, help="Target quantization config.")
    _add_data_flags(ptq)

    qaft = sub.add_parser("qaft", parents=[common], help="Quantization-aware fine-tuning.")
    qaft.add_argument("--model", type=Path, help="Full-precision model file.")
    qaft.add_argument("--quant", type=_quant_name, help="Target quantization config.")
    _add_data_flags(qaft)
    _add_train_flags(qaft)

    ev = sub.add_parser("eval", parents=[common], help="Evaluate a saved model.")
    ev.add_argument("--model", type=Path, help="Model file to score.")
    ev.add_argument("--split", choices=["train", "val", "test"], help="Split to score.")
    _add_data_flags(ev)

    sweep = sub.add_parser("sweep", parents=[common], help="Sweep delays x quant configs x seeds.")
    sweep.add_argument("--taus", type=_csv_list(float), help="Comma-separated delays.")
    sweep.add_argument("--quants", type=_csv_list(_quant_name), help="Comma-separated quant configs.")
    sweep.add_argument("--seeds", type=_csv_list(int), help="Comma-separated seeds.")
    sweep.add_argument("--workers", type=int, help="Worker processes.")
    _add_train_flags(sweep)

    ablate = sub.add_parser("ablate", parents=[common], help="Quantized-operator ablation.")
    ablate.add_argument("--quant", type=_quant_name, help="Quantization config to ablate.")
    ablate.add_argument("--mode", choices=ABLATION_MODES, help="Quantize a trained model or retrain.")
    ablate.add_argument("--model", type=Path, help="Full-precision model (ptq mode).")
    _add_data_flags(ablate)
    _add_train_flags(ablate)
    return parser


# Config resolution ------------------------------------------------------


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    # Config file first, then command-line overrides.
    cfg = load_experiment_config(args.config) if args.config else ExperimentConfig()
    mg = cfg.mackey_glass
    train = cfg.train
    task = getattr(args, "task", None) or cfg.task
    tau = getattr(args, "tau", None)
    if tau is not None:
        mg = replace(mg, tau=tau, transient=max(mg.transient, math.ceil(tau / mg.dt)))
    if args.command == "generate":
        overrides = {
            key: getattr(args, key)
            for key in ("steps", "seed", "dt", "transient")
            if getattr(args, key) is not None
        }
        mg = replace(mg, **overrides)
    train_overrides = {
        field_name: getattr(args, flag)
        for flag, field_name in (
            ("epochs", "epochs"),
            ("lr", "lr"),
            ("batch_size", "batch_size"),
            ("seed", "seed"),
            ("checkpoint", "checkpoint"),
            ("eval_split", "eval_split"),
            ("quantize_gradients", "quantize_gradients"),
        )
        if args.command != "generate" and getattr(args, flag, None) is not None
    }
    if getattr(args, "quant", None) is not None:
        train_overrides["quant"] = args.quant
    if args.command == "eval" and args.split is not None:
        train_overrides["eval_split"] = args.split
    train = replace(train, **train_overrides)
    sweep_overrides: dict[str, Any] = {
        key: tuple(getattr(args, key))
        for key in ("taus", "quants", "seeds")
        if getattr(args, key, None) is not None
    }
    if getattr(args, "workers", None) is not None:
        sweep_overrides["workers"] = args.workers
    sweep = replace(cfg.sweep, **sweep_overrides)
    model_path = str(args.model) if getattr(args, "model", None) is not None else cfg.model_path
    mode = getattr(args, "mode", None) or cfg.ablation_mode
    output_dir = str(args.out) if args.out is not None else str(cfg.output_path / args.command)
    return replace(
        cfg,
        task=task,
        mackey_glass=mg,
        train=train,
        sweep=sweep,
        model_path=model_path,
        ablation_mode=mode,
        output_dir=output_dir,
    )


def _input_model(cfg: ExperimentConfig, command: str) -> Path:
    if not cfg.model_path:
        raise ConfigError(f"{command} needs --model or model_path in the config")
    return Path(cfg.model_path)


def _build_task(cfg: ExperimentConfig) -> TaskData:
    if cfg.task == "toy_classification":
        return build_toy_task(cfg.toy)
    return build_forecast_task(
        cfg.mackey_glass,
        cfg.forecast.context_len,
        cfg.forecast.horizon,
        stride=cfg.forecast.stride,
    )


def _progress_enabled(args: argparse.Namespace) -> bool:
    return not args.quiet and sys.stderr.isatty()


def _training_summary(result: TrainResult, data: TaskData, started: float) -> dict[str, Any]:
    return {
        "status": result.status,
        "converged": result.converged,
        "quant": result.model.qcfg.name,
        "task": data.kind,
        "metric": metric_name(data.kind),
        "best_epoch": result.best_epoch if result.best_epoch is not None else 0,
        "best_metric": result.best_metric,
        "final_metric": result.final_metric,
        "baseline_metric": result.baseline_metric,
        "epochs_run": len(result.history),
        "lr": result.lr,
        "params": result.model.num_parameters(),
        "dataset": data.fingerprint,
        "wall_time": monotonic() - started,
    }


def _finish_training(
    result: TrainResult, data: TaskData, out: Path, started: float, label: str
) -> int:
    write_run_log(result.history, out / RUN_LOG_FILENAME, fingerprint=data.fingerprint)
    summary = _training_summary(result, data, started)
    if result.converged:
        summary["model"] = str(save_model(result.model, out / MODEL_FILENAME))
    write_summary(out / SUMMARY_FILENAME, summary)
    name = metric_name(data.kind)
    print(
        f"{label} {result.model.qcfg.name}: {result.status}, "
        f"{format_metric(name, result.best_metric)} "
        f"(untrained {format_metric(name, result.baseline_metric)}) "
        f"in {format_elapsed(summary['wall_time'])}"
    )
    print(f"Outputs written to {out}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


# Commands ---------------------------------------------------------------


def cmd_generate(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> int:
    series = generate_mackey_glass(cfg.mackey_glass)
    path = series.to_csv(out / SERIES_FILENAME)
    print(f"Wrote {cfg.mackey_glass.steps} rows to {path} ({series.fingerprint})")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> int:
    started = monotonic()
    data = _build_task(cfg)
    result = train_qat(
        cfg.train,
        data,
        dims=cfg.model.dims(),
        ops=cfg.ops,
        readout=cfg.model.readout,
        scan=cfg.model.scan,
        out_dir=out,
        progress=_progress_enabled(args),
    )
    return _finish_training(result, data, out, started, "QAT")


def cmd_ptq(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> int:
    model = load_model(_input_model(cfg, "ptq"))
    data = _build_task(cfg)
    quantized, metric = evaluate_ptq(model, cfg.train.qcfg, data.split(cfg.train.eval_split))
    path = save_model(quantized, out / MODEL_FILENAME)
    report = memory_report(quantized)
    name = metric_name(data.kind)
    write_summary(
        out / SUMMARY_FILENAME,
        {
            "quant": quantized.qcfg.name,
            "metric": name,
            "value": metric,
            "split": cfg.train.eval_split,
            "dataset": data.fingerprint,
            "model": str(path),
            "memory": {
                "float32_bytes": report.float32_bytes,
                "payload_bytes": report.payload_bytes,
                "float_remainder_bytes": report.float_remainder_bytes,
                "quantized_bytes": report.quantized_bytes,
                "compression": report.compression,
            },
        },
    )
    print(
        f"PTQ {quantized.qcfg.name}: {format_metric(name, metric)}, "
        f"{format_bytes(report.float32_bytes)} -> {format_bytes(report.quantized_bytes)}"
    )
    return EXIT_OK


def cmd_qaft(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> int:
    started = monotonic()
    model = load_model(_input_model(cfg, "qaft"))
    data = _build_task(cfg)
    result = finetune_qaft(
        model,
        cfg.train,
        data,
        out_dir=out,
        progress=_progress_enabled(args),
    )
    return _finish_training(result, data, out, started, "QAFT")


def cmd_eval(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> int:
    model_path = _input_model(cfg, "eval")
    model = load_model(model_path)
    data = _build_task(cfg)
    split = cfg.train.eval_split
    metric = evaluate(model, data.split(split))
    name = metric_name(data.kind)
    write_summary(
        out / "metrics.toml",
        {
            "quant": model.qcfg.name,
            "metric": name,
            "value": metric,
            "split": split,
            "dataset": data.fingerprint,
            "model": str(model_path),
        },
    )
    print(f"{model.qcfg.name} on {split}: {format_metric(name, metric)}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> int:
    cells = sweep_cells(cfg.sweep.taus, cfg.sweep.quants, cfg.sweep.seeds)

    def report(done: int, total: int, label: str) -> None:
        if not args.quiet:
            print(f"[{done}/{total}] {label}", flush=True)

    worker = SweepWorker(config=cfg, cells=cells, out_dir=out, workers=cfg.sweep.workers, progress=report)
    payload = worker.run()
    if payload is None:
        return EXIT_NOT_CONVERGED
    payload.cells.to_csv(out / "cells.csv", index=False, float_format="%.17g")
    payload.aggregate.to_csv(out / "aggregate.csv", index=False, float_format="%.17g")
    print(
        f"Sweep of {len(cells)} cells ({payload.stats.failed} failed) "
        f"in {format_elapsed(payload.stats.duration or 0.0)}"
    )
    print(payload.aggregate.to_string(index=False))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> int:
    data = _build_task(cfg)
    qcfg = cfg.train.qcfg
    if cfg.ablation_mode == "ptq":
        model = load_model(_input_model(cfg, "ablate --mode ptq"))
        rows = ptq_ablation(model, qcfg, data.split(cfg.train.eval_split))
    else:
        rows = qat_ablation(cfg.train, data, dims=cfg.model.dims())
    frame = pd.DataFrame(
        [
            {
                "ops": row.label,
                "activation": row.ops.activation,
                "gate": row.ops.gate,
                "norm": row.ops.norm,
                metric_name(data.kind): row.metric,
            }
            for row in rows
        ]
    )
    frame.to_csv(out / "ablation.csv", index=False, float_format="%.17g")
    print(f"Ablation of {qcfg.name} ({cfg.ablation_mode}) over {', '.join(ABLATION_ROWS)}")
    print(frame.to_string(index=False))
    return EXIT_OK


_COMMANDS: Final[dict[str, Callable[[argparse.Namespace, ExperimentConfig, Path], int]]] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "ptq": cmd_ptq,
    "qaft": cmd_qaft,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
}


def main(argv: Sequence[str] | None = None) -> int:
    # Entry point for the CLI utility.
    parser = build_parser()
    args = parser.parse_args(argv)
    logger_service.configure(log_level=args.log_level, log_dir=args.log_dir)

    try:
        if args.out is None:
            ensure_app_dirs()
        cfg = _resolve_config(args)
        out = Path(cfg.output_dir)
        save_experiment_config(cfg, out / CONFIG_FILENAME)
        return _COMMANDS[args.command](args, cfg, out)
    except (ModelFormatError, OSError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GenerationError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (ConfigError, QuantConfigError, ShapeMismatchError, InsufficientDataError, ValueError) as exc:
        logger.error("%s", exc)
        print(f"usage error: {exc}", file=sys.stderr)
        if isinstance(exc, QuantConfigError):
            print(f"known configs: {', '.join(TABLE_CONFIGS)}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
