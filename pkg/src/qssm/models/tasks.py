# Filename: tasks.py
# Author: Rich Lewis @RichLewis007
# Description: Task datasets in tensor form. Mackey-Glass forecasting windows and the synthetic
#              toy classification task (which of K frequency patterns produced a noisy sequence).

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import torch
from torch import Tensor

from .mackey_glass import MackeyGlassConfig, generate_mackey_glass, make_forecast_dataset
from .network import TaskKind


@dataclass(frozen=True, slots=True)
class ToyTaskConfig:
    """Synthetic sequence classification.

    Class ``k`` is a sinusoid with ``base_cycles * (k + 1)`` periods over the
    sequence, a random phase and amplitude in [0.5, 1.5], plus Gaussian noise.
    """

    classes: int = 4
    length: int = 256
    samples: int = 400
    noise: float = 0.5
    base_cycles: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.classes < 2:
            raise ValueError(f"need at least two classes, got {self.classes}")
        if self.length < 1 or self.samples < 10:
            raise ValueError("length must be positive and samples at least 10")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    def fingerprint(self) -> str:
        canonical = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True, slots=True)
class TensorSplit:
    inputs: Tensor
    targets: Tensor

    def __len__(self) -> int:
        return int(self.inputs.shape[0])


@dataclass(frozen=True, slots=True)
class TaskData:
    # Train/val/test tensors with the dimensions a model needs.

    kind: TaskKind
    train: TensorSplit
    val: TensorSplit
    test: TensorSplit
    input_dim: int
    output_dim: int
    fingerprint: str

    def split(self, name: str) -> TensorSplit:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        split: TensorSplit = getattr(self, name)
        return split


def build_forecast_task(
    cfg: MackeyGlassConfig,
    context_len: int = 64,
    horizon: int = 1,
    *,
    stride: int = 1,
) -> TaskData:
    dataset = make_forecast_dataset(
        generate_mackey_glass(cfg), context_len, horizon, stride=stride
    )

    def _split(name: str) -> TensorSplit:
        windows = dataset.split(name)
        return TensorSplit(torch.from_numpy(windows.inputs), torch.from_numpy(windows.targets))

    return TaskData(
        kind="regression",
        train=_split("train"),
        val=_split("val"),
        test=_split("test"),
        input_dim=cfg.channels,
        output_dim=cfg.channels,
        fingerprint=dataset.fingerprint,
    )


def build_toy_task(cfg: ToyTaskConfig) -> TaskData:
    gen = torch.Generator().manual_seed(cfg.seed)
    labels = torch.randint(0, cfg.classes, (cfg.samples,), generator=gen)
    phase = torch.rand(cfg.samples, 1, generator=gen) * 2 * math.pi
    amplitude = 0.5 + torch.rand(cfg.samples, 1, generator=gen)
    t = torch.arange(cfg.length, dtype=torch.float32) / cfg.length
    cycles = cfg.base_cycles * (labels.to(torch.float32) + 1)
    clean = amplitude * torch.sin(2 * math.pi * cycles[:, None] * t[None, :] + phase)
    noisy = clean + cfg.noise * torch.randn(cfg.samples, cfg.length, generator=gen)
    inputs = noisy.unsqueeze(-1)

    cut_val, cut_test = int(0.8 * cfg.samples), int(0.9 * cfg.samples)
    return TaskData(
        kind="classification",
        train=TensorSplit(inputs[:cut_val], labels[:cut_val]),
        val=TensorSplit(inputs[cut_val:cut_test], labels[cut_val:cut_test]),
        test=TensorSplit(inputs[cut_test:], labels[cut_test:]),
        input_dim=1,
        output_dim=cfg.classes,
        fingerprint=cfg.fingerprint(),
    )


__all__ = [
    "TaskData",
    "TensorSplit",
    "ToyTaskConfig",
    "build_forecast_task",
    "build_toy_task",
]
