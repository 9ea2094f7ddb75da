"""Shared pytest configuration."""

from __future__ import annotations

import sys
from pathlib import Path


def _ensure_src_on_path() -> None:
    root = Path(__file__).resolve().parents[1]
    src_dir = root / "src"
    src_str = str(src_dir)
    if src_dir.exists() and src_str not in sys.path:
        sys.path.insert(0, src_str)


_ensure_src_on_path()

import pytest  # noqa: E402

from qssm.models.mackey_glass import MackeyGlassConfig  # noqa: E402
from qssm.models.network import ModelDims  # noqa: E402
from qssm.models.tasks import TaskData, ToyTaskConfig, build_forecast_task, build_toy_task  # noqa: E402
from qssm.services.config import ExperimentConfig, ForecastSection, ModelSection  # noqa: E402
from qssm.workers.trainer import TrainConfig  # noqa: E402

DATA_DIR = Path(__file__).resolve().parent / "data"

SMALL_SERIES = MackeyGlassConfig(tau=10.0, steps=200, transient=100, seed=0)
SMALL_DIMS = ModelDims(features=2, state_size=4, depth=1)


@pytest.fixture(name="forecast_task")
def fixture_forecast_task() -> TaskData:
    """Short Mackey-Glass forecasting task: 16-step windows, stride 2."""
    return build_forecast_task(SMALL_SERIES, context_len=16, horizon=1, stride=2)


@pytest.fixture(name="toy_task")
def fixture_toy_task() -> TaskData:
    return build_toy_task(ToyTaskConfig(classes=2, length=16, samples=40, seed=0))


@pytest.fixture(name="quick_train")
def fixture_quick_train() -> TrainConfig:
    return TrainConfig(epochs=3, batch_size=16, lr=0.01, seed=0)


@pytest.fixture(name="tiny_experiment")
def fixture_tiny_experiment() -> ExperimentConfig:
    """Experiment config small enough for end-to-end command tests."""
    return ExperimentConfig(
        task="mackey_glass",
        model=ModelSection(h=2, p=4, depth=1),
        train=TrainConfig(epochs=2, batch_size=16, lr=0.01),
        mackey_glass=SMALL_SERIES,
        toy=ToyTaskConfig(classes=2, length=16, samples=40),
        forecast=ForecastSection(context_len=16, horizon=1, stride=4),
    )
