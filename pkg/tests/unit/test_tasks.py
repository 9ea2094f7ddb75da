"""Tests for the task datasets."""

from __future__ import annotations

import pytest
import torch

from qssm.models.mackey_glass import MackeyGlassConfig
from qssm.models.tasks import TaskData, ToyTaskConfig, build_forecast_task, build_toy_task


def test_forecast_task_shapes(forecast_task: TaskData) -> None:
    assert forecast_task.kind == "regression"
    assert forecast_task.input_dim == forecast_task.output_dim == 10
    assert forecast_task.train.inputs.shape == (73, 16, 10)
    assert forecast_task.train.inputs.dtype == torch.float32
    assert (len(forecast_task.val), len(forecast_task.test)) == (9, 10)
    assert forecast_task.fingerprint == MackeyGlassConfig(tau=10.0, steps=200, transient=100).fingerprint()


def test_forecast_targets_lead_inputs_by_one_step(forecast_task: TaskData) -> None:
    train = forecast_task.train
    assert torch.equal(train.targets[:, :-1], train.inputs[:, 1:])


def test_toy_task_labels_and_splits(toy_task: TaskData) -> None:
    assert toy_task.kind == "classification"
    assert toy_task.input_dim == 1
    assert toy_task.output_dim == 2
    assert toy_task.train.inputs.shape == (32, 16, 1)
    assert len(toy_task.val) == len(toy_task.test) == 4
    assert int(toy_task.train.targets.min()) >= 0 and int(toy_task.train.targets.max()) <= 1


def test_toy_task_is_seeded() -> None:
    cfg = ToyTaskConfig(samples=20, length=8)
    assert torch.equal(build_toy_task(cfg).train.inputs, build_toy_task(cfg).train.inputs)
    other = build_toy_task(ToyTaskConfig(samples=20, length=8, seed=1))
    assert not torch.equal(build_toy_task(cfg).train.inputs, other.train.inputs)


def test_split_lookup() -> None:
    data = build_forecast_task(MackeyGlassConfig(tau=5.0, steps=100, transient=10), context_len=4)
    assert data.split("val") is data.val
    with pytest.raises(ValueError):
        data.split("holdout")


@pytest.mark.parametrize("kwargs", [{"classes": 1}, {"samples": 5}, {"noise": -0.1}, {"length": 0}])
def test_toy_config_validation(kwargs: dict[str, float]) -> None:
    with pytest.raises(ValueError):
        ToyTaskConfig(**kwargs)  # type: ignore[arg-type]
