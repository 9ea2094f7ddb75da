# Filename: trainer.py
# Author: Rich Lewis @RichLewis007
# Description: Training pipelines for quantized S5 models. Loss functions, backpropagation with
#              straight-through estimators, the Adam step, evaluation, quantization-aware
#              training (QAT), post-training quantization (PTQ) evaluation, quantization-aware
#              fine-tuning (QAFT) and the quantized-operator ablation.

from __future__ import annotations

import copy
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from pathlib import Path
from time import monotonic
from typing import Final, Literal

import torch
import torch.nn.functional as F
from torch import Tensor
from torch.utils.data import DataLoader, TensorDataset
from tqdm import tqdm

from qssm.errors import (
    NonFiniteGradientError,
    QuantizationError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from qssm.models.metrics import accuracy, smape
from qssm.models.network import (
    DEFAULT_DIMS,
    DEFAULT_OPS,
    ModelDims,
    OpsConfig,
    S5Model,
    TaskKind,
    apply_ptq,
)
from qssm.models.quant_config import EffectiveBits, QuantConfig, parse_quant_config
from qssm.models.serialization import save_model
from qssm.models.ssm import Readout, ScanMode
from qssm.models.tasks import TaskData, TensorSplit

logger = logging.getLogger(__name__)

LrSchedule = Literal["cosine", "constant"]
CheckpointMode = Literal["best", "final"]
SplitName = Literal["train", "val", "test"]
RunStatus = Literal["converged", "diverged", "unstable"]

ADAM_BETAS: Final[tuple[float, float]] = (0.9, 0.999)
ADAM_EPS: Final[float] = 1e-8
DIVERGED_DUMP: Final[str] = "diverged.qssm"

# Operator combinations of the ablation table, keyed by row label.
ABLATION_ROWS: Final[dict[str, OpsConfig]] = {
    "none": OpsConfig(activation="gelu", gate="sigmoid", norm="layer_norm"),
    "HS": OpsConfig(activation="gelu", gate="hard_sigmoid", norm="layer_norm"),
    "qGELU": OpsConfig(activation="qgelu", gate="sigmoid", norm="layer_norm"),
    "qLN": OpsConfig(activation="gelu", gate="sigmoid", norm="quant_layer_norm"),
    "all": OpsConfig(activation="qgelu", gate="hard_sigmoid", norm="quant_layer_norm"),
}


@dataclass(frozen=True, slots=True)
class QaftConfig:
    # Fine-tuning budget relative to the pretraining run.

    enabled: bool = False
    lr_fraction: float = 0.01
    epoch_fraction: float = 0.10

    def __post_init__(self) -> None:
        for name in ("lr_fraction", "epoch_fraction"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"qaft.{name} must lie in (0, 1], got {value}")


@dataclass(frozen=True, slots=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 0.01
    weight_decay: float = 0.0
    seed: int = 0
    quant: str = "FP"
    lr_schedule: LrSchedule = "cosine"
    checkpoint: CheckpointMode = "best"
    eval_split: SplitName = "test"
    grad_clip: float = 1.0
    quantize_gradients: bool = False
    divergence_factor: float = 1e3
    divergence_patience: int = 3
    qaft: QaftConfig = field(default_factory=QaftConfig)

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.checkpoint not in ("best", "final"):
            raise ValueError(f"unknown checkpoint mode {self.checkpoint!r}")
        if self.eval_split not in ("train", "val", "test"):
            raise ValueError(f"unknown eval_split {self.eval_split!r}")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be non-negative; 0 disables clipping")

    @property
    def qcfg(self) -> QuantConfig:
        return parse_quant_config(self.quant)

    @property
    def qaft_epochs(self) -> int:
        # ceil(epochs * fraction), guarded against float noise such as 0.1 * 30.
        return max(1, math.ceil(self.epochs * self.qaft.epoch_fraction - 1e-9))

    @property
    def qaft_lr(self) -> float:
        return self.lr * self.qaft.lr_fraction


@dataclass(frozen=True, slots=True)
class EpochRecord:
    epoch: int
    train_loss: float
    eval_metric: float
    lr: float
    wall_time: float


@dataclass(slots=True)
class TrainResult:
    # Outcome of one training run; ``model`` holds the selected checkpoint.

    model: S5Model
    history: list[EpochRecord]
    best_epoch: int | None
    best_metric: float
    baseline_metric: float
    status: RunStatus = "converged"
    lr: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def final_metric(self) -> float:
        return self.history[-1].eval_metric if self.history else self.baseline_metric


@dataclass(frozen=True, slots=True)
class Gradients:
    loss: float
    grads: dict[str, Tensor]


@dataclass(frozen=True, slots=True)
class AblationRow:
    label: str
    ops: OpsConfig
    metric: float


def metric_name(kind: TaskKind) -> str:
    return "smape" if kind == "regression" else "accuracy"


def is_better(kind: TaskKind, candidate: float, incumbent: float | None) -> bool:
    # Lower sMAPE or higher accuracy wins; NaN never does.
    if math.isnan(candidate):
        return False
    if incumbent is None or math.isnan(incumbent):
        return True
    return candidate < incumbent if kind == "regression" else candidate > incumbent


def compute_loss(kind: TaskKind, pred: Tensor, target: Tensor) -> Tensor:
    """MSE for regression, cross-entropy over logits for classification.

    Classification logits may carry a length-1 time axis, (B, 1, K).
    """
    if kind == "regression":
        if pred.shape != target.shape:
            raise ShapeMismatchError(
                f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ"
            )
        return F.mse_loss(pred, target)
    logits = pred.squeeze(-2) if pred.dim() == 3 and pred.shape[-2] == 1 else pred
    if logits.dim() != 2 or logits.shape[0] != target.shape[0] or target.dim() != 1:
        raise ShapeMismatchError(
            f"logits {tuple(pred.shape)} do not match class targets {tuple(target.shape)}"
        )
    return F.cross_entropy(logits, target.long())


def check_gradients(model: S5Model) -> None:
    for name, param in model.named_parameters():
        if param.grad is not None and not bool(torch.isfinite(param.grad).all()):
            raise NonFiniteGradientError(name)


def backward(
    model: S5Model,
    inputs: Tensor,
    targets: Tensor,
    *,
    bits: EffectiveBits | None = None,
) -> Gradients:
    """Forward, loss and reverse-mode gradients through the whole sequence.

    Rounding nodes pass gradients straight through. Raises
    NonFiniteGradientError naming the first parameter with a bad gradient.
    """
    model.zero_grad(set_to_none=True)
    loss = compute_loss(model.task, model(inputs, bits=bits), targets)
    loss.backward()
    check_gradients(model)
    grads = {
        name: param.grad.detach().clone()
        for name, param in model.named_parameters()
        if param.grad is not None
    }
    return Gradients(loss=float(loss.detach()), grads=grads)


def make_optimizer(model: S5Model, lr: float, weight_decay: float = 0.0) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(), lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS, weight_decay=weight_decay
    )


def adam_step(optimizer: torch.optim.Optimizer, lr: float | None = None) -> None:
    # One bias-corrected Adam update with decoupled weight decay.
    if lr is not None:
        for group in optimizer.param_groups:
            group["lr"] = lr
    optimizer.step()


def make_loader(split: TensorSplit, batch_size: int, seed: int, *, shuffle: bool = True) -> DataLoader:
    gen = torch.Generator().manual_seed(seed)
    dataset = TensorDataset(split.inputs, split.targets)
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, generator=gen)


def evaluate(model: S5Model, split: TensorSplit, *, batch_size: int = 256) -> float:
    """sMAPE for regression, accuracy for classification.

    A forward pass that breaks down numerically (for example an empty 1-bit
    grid) scores NaN instead of raising.
    """
    outputs: list[Tensor] = []
    try:
        with torch.no_grad():
            for start in range(0, len(split), batch_size):
                outputs.append(model(split.inputs[start : start + batch_size]))
    except QuantizationError as exc:
        logger.warning("Evaluation of %s failed: %s", model.qcfg.name, exc)
        return float("nan")
    pred = torch.cat(outputs)
    if model.task == "regression":
        return smape(split.targets, pred)
    return accuracy(pred.squeeze(-2), split.targets)


def _dump_diverged(model: S5Model, out_dir: Path | None) -> Path | None:
    if out_dir is None:
        return None
    try:
        return save_model(model, out_dir / DIVERGED_DUMP)
    except OSError:
        logger.exception("Could not dump diverged model state to %s", out_dir)
        return None


def _train_epoch(
    model: S5Model,
    loader: DataLoader,
    optimizer: torch.optim.Optimizer,
    *,
    clip: float | None,
    epoch: int,
    out_dir: Path | None,
) -> float:
    total, batches = 0.0, 0
    for inputs, targets in loader:
        optimizer.zero_grad(set_to_none=True)
        try:
            loss = compute_loss(model.task, model(inputs), targets)
        except QuantizationError as exc:
            raise TrainingDivergedError(
                f"forward pass broke down: {exc}", epoch=epoch, dump_path=_dump_diverged(model, out_dir)
            ) from exc
        if not bool(torch.isfinite(loss)):
            raise TrainingDivergedError(
                "non-finite training loss", epoch=epoch, dump_path=_dump_diverged(model, out_dir)
            )
        loss.backward()
        try:
            check_gradients(model)
        except NonFiniteGradientError as exc:
            raise TrainingDivergedError(
                str(exc), epoch=epoch, dump_path=_dump_diverged(model, out_dir)
            ) from exc
        if clip is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), clip)
        adam_step(optimizer)
        total += float(loss.detach())
        batches += 1
        logger.debug("epoch %d batch %d loss %.6g", epoch, batches, float(loss.detach()))
    return total / max(batches, 1)


def fit(
    model: S5Model,
    data: TaskData,
    cfg: TrainConfig,
    *,
    epochs: int,
    lr: float,
    out_dir: Path | None = None,
    progress: bool = False,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Train ``model`` in place with fake quantization active on every step.

    Raises TrainingDivergedError on a non-finite loss or gradient after
    dumping the model to ``out_dir``; a loss that stays above
    ``divergence_factor`` times the first epoch's for ``divergence_patience``
    epochs ends the run as unstable.
    """
    eval_split = data.split(cfg.eval_split)
    baseline = evaluate(model, eval_split)
    loader = make_loader(data.train, cfg.batch_size, cfg.seed)
    optimizer = make_optimizer(model, lr, cfg.weight_decay)
    scheduler = (
        torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=epochs)
        if cfg.lr_schedule == "cosine"
        else None
    )
    clip = cfg.grad_clip if cfg.grad_clip > 0 and model.effective_bits().any_quantized else None

    history: list[EpochRecord] = []
    best_metric: float | None = None
    best_epoch: int | None = None
    best_state = copy.deepcopy(model.state_dict())
    first_loss: float | None = None
    strikes = 0
    status: RunStatus = "converged"
    name = metric_name(model.task)

    bar = tqdm(range(1, epochs + 1), desc=f"{model.qcfg.name}", disable=not progress, leave=False)
    for epoch in bar:
        started = monotonic()
        epoch_lr = float(optimizer.param_groups[0]["lr"])
        train_loss = _train_epoch(
            model, loader, optimizer, clip=clip, epoch=epoch, out_dir=out_dir
        )
        if scheduler is not None:
            scheduler.step()
        metric = evaluate(model, eval_split)
        record = EpochRecord(
            epoch=epoch,
            train_loss=train_loss,
            eval_metric=metric,
            lr=epoch_lr,
            wall_time=monotonic() - started,
        )
        history.append(record)
        bar.set_postfix(loss=f"{train_loss:.4g}", **{name: f"{metric:.4g}"})
        logger.info(
            "%s epoch %d/%d loss %.6g %s %.6g lr %.3g",
            model.qcfg.name,
            epoch,
            epochs,
            train_loss,
            name,
            metric,
            epoch_lr,
        )
        if on_epoch is not None:
            on_epoch(record)

        if is_better(model.task, metric, best_metric):
            best_metric, best_epoch = metric, epoch
            best_state = copy.deepcopy(model.state_dict())
        if first_loss is None:
            first_loss = train_loss
        strikes = strikes + 1 if train_loss > cfg.divergence_factor * first_loss else 0
        if strikes >= cfg.divergence_patience:
            status = "unstable"
            logger.warning(
                "%s loss stayed above %gx its first epoch for %d epochs; stopping",
                model.qcfg.name,
                cfg.divergence_factor,
                strikes,
            )
            break

    if cfg.checkpoint == "best" and best_epoch is not None:
        model.load_state_dict(best_state)
    return TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_metric=best_metric if best_metric is not None else float("nan"),
        baseline_metric=baseline,
        status=status,
        lr=lr,
    )


def build_model(
    cfg: TrainConfig,
    data: TaskData,
    *,
    dims: ModelDims = DEFAULT_DIMS,
    ops: OpsConfig = DEFAULT_OPS,
    readout: Readout = "current",
    scan: ScanMode = "auto",
    qcfg: QuantConfig | None = None,
) -> S5Model:
    # Model sized for the task's input and output dimensions.
    return S5Model(
        replace(dims, input_dim=data.input_dim, output_dim=data.output_dim),
        task=data.kind,
        seed=cfg.seed,
        qcfg=qcfg if qcfg is not None else cfg.qcfg,
        readout=readout,
        scan=scan,
        ops=ops,
        quantize_gradients=cfg.quantize_gradients,
    )


def _collector(
    history: list[EpochRecord], on_epoch: Callable[[EpochRecord], None] | None
) -> Callable[[EpochRecord], None]:
    # Keep completed epochs so a diverged run still reports them.
    def _collect(record: EpochRecord) -> None:
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)

    return _collect


def _diverged_result(
    model: S5Model, exc: TrainingDivergedError, lr: float, history: list[EpochRecord]
) -> TrainResult:
    logger.warning("%s diverged: %s", model.qcfg.name, exc)
    return TrainResult(
        model=model,
        history=history,
        best_epoch=None,
        best_metric=float("nan"),
        baseline_metric=float("nan"),
        status="diverged",
        lr=lr,
    )


def train_qat(
    cfg: TrainConfig,
    data: TaskData,
    *,
    dims: ModelDims = DEFAULT_DIMS,
    ops: OpsConfig = DEFAULT_OPS,
    readout: Readout = "current",
    scan: ScanMode = "auto",
    out_dir: Path | None = None,
    progress: bool = False,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    # Quantization-aware training from scratch; a full-precision config is plain training.
    model = build_model(cfg, data, dims=dims, ops=ops, readout=readout, scan=scan)
    logger.info(
        "Training %s on %s task (%d parameters, %d epochs)",
        model.qcfg.name,
        data.kind,
        model.num_parameters(),
        cfg.epochs,
    )
    seen: list[EpochRecord] = []
    try:
        return fit(
            model,
            data,
            cfg,
            epochs=cfg.epochs,
            lr=cfg.lr,
            out_dir=out_dir,
            progress=progress,
            on_epoch=_collector(seen, on_epoch),
        )
    except TrainingDivergedError as exc:
        return _diverged_result(model, exc, cfg.lr, seen)


def finetune_qaft(
    model: S5Model,
    cfg: TrainConfig,
    data: TaskData,
    *,
    qcfg: QuantConfig | None = None,
    out_dir: Path | None = None,
    progress: bool = False,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Continue a full-precision model with quantization active.

    Runs ``ceil(epoch_fraction * epochs)`` epochs at ``lr_fraction * lr``.
    The per-epoch history keeps every snapshot's metric.
    """
    if not model.qcfg.is_full_precision:
        raise ValueError(f"QAFT starts from a full-precision model, got {model.qcfg.name}")
    tuned = copy.deepcopy(model)
    tuned.qcfg = qcfg if qcfg is not None else cfg.qcfg
    tuned.quantize_gradients = cfg.quantize_gradients
    epochs, lr = cfg.qaft_epochs, cfg.qaft_lr
    logger.info("QAFT %s: %d epochs at lr %.3g", tuned.qcfg.name, epochs, lr)
    seen: list[EpochRecord] = []
    try:
        return fit(
            tuned,
            data,
            cfg,
            epochs=epochs,
            lr=lr,
            out_dir=out_dir,
            progress=progress,
            on_epoch=_collector(seen, on_epoch),
        )
    except TrainingDivergedError as exc:
        return _diverged_result(tuned, exc, lr, seen)


def evaluate_ptq(
    model: S5Model, qcfg: QuantConfig, split: TensorSplit
) -> tuple[S5Model, float]:
    # Quantize without training and score the result.
    quantized = apply_ptq(model, qcfg)
    metric = evaluate(quantized, split)
    logger.info("PTQ %s scored %.6g", qcfg.name, metric)
    return quantized, metric


def ptq_ablation(
    model: S5Model,
    qcfg: QuantConfig,
    split: TensorSplit,
    rows: dict[str, OpsConfig] = ABLATION_ROWS,
) -> list[AblationRow]:
    # PTQ score with each operator combination swapped in.
    quantized = apply_ptq(model, qcfg)
    results = []
    for label, ops in rows.items():
        quantized.ops = ops
        results.append(AblationRow(label=label, ops=ops, metric=evaluate(quantized, split)))
    return results


def qat_ablation(
    cfg: TrainConfig,
    data: TaskData,
    *,
    dims: ModelDims = DEFAULT_DIMS,
    rows: dict[str, OpsConfig] = ABLATION_ROWS,
) -> list[AblationRow]:
    # One QAT run per operator combination.
    split = data.split(cfg.eval_split)
    results = []
    for label, ops in rows.items():
        result = train_qat(cfg, data, dims=dims, ops=ops)
        metric = evaluate(result.model, split) if result.converged else float("nan")
        results.append(AblationRow(label=label, ops=ops, metric=metric))
    return results


__all__ = [
    "ABLATION_ROWS",
    "AblationRow",
    "EpochRecord",
    "Gradients",
    "QaftConfig",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "backward",
    "build_model",
    "compute_loss",
    "evaluate",
    "evaluate_ptq",
    "finetune_qaft",
    "fit",
    "is_better",
    "make_loader",
    "make_optimizer",
    "metric_name",
    "ptq_ablation",
    "qat_ablation",
    "train_qat",
]
