"""Tests for losses, gradients, the Adam step and the QAT/PTQ/QAFT pipelines."""

from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

import pytest
import torch

from qssm.errors import NonFiniteGradientError, ShapeMismatchError
from qssm.models.network import ModelDims, OpsConfig, S5Model
from qssm.models.quant import fake_quant_value
from qssm.models.quant_config import EffectiveBits, parse_quant_config
from qssm.models.tasks import TaskData, TensorSplit
from qssm.workers.trainer import (
    ABLATION_ROWS,
    DIVERGED_DUMP,
    QaftConfig,
    TrainConfig,
    adam_step,
    backward,
    compute_loss,
    evaluate,
    evaluate_ptq,
    finetune_qaft,
    is_better,
    make_optimizer,
    ptq_ablation,
    train_qat,
)

SMALL = ModelDims(features=2, state_size=4, depth=1)
FLOAT_OPS = OpsConfig(activation="gelu", gate="sigmoid", norm="layer_norm")


def _double_model(dims: ModelDims, **kwargs: object) -> S5Model:
    return S5Model(dims, **kwargs).double()  # type: ignore[arg-type]


# Losses -------------------------------------------------------------------


def test_mse_loss_values() -> None:
    target = torch.tensor([[[0.0, 0.0]]])
    assert compute_loss("regression", target.clone(), target).item() == 0.0
    assert compute_loss("regression", torch.tensor([[[1.0, 0.0]]]), target).item() == pytest.approx(0.5)


def test_cross_entropy_of_uniform_logits_is_log_k() -> None:
    logits = torch.zeros(3, 1, 5)
    targets = torch.tensor([0, 4, 2])
    assert compute_loss("classification", logits, targets).item() == pytest.approx(math.log(5))


def test_loss_shape_checks() -> None:
    with pytest.raises(ShapeMismatchError):
        compute_loss("regression", torch.zeros(2, 3, 1), torch.zeros(2, 3, 2))
    with pytest.raises(ShapeMismatchError):
        compute_loss("classification", torch.zeros(2, 1, 3), torch.zeros(3, dtype=torch.long))


def test_metric_comparison_direction() -> None:
    assert is_better("regression", 10.0, 12.0)
    assert not is_better("regression", 12.0, 10.0)
    assert is_better("classification", 0.9, 0.8)
    assert is_better("regression", 5.0, None)
    assert not is_better("regression", float("nan"), 5.0)


# Gradients ----------------------------------------------------------------


def test_gradients_match_central_differences() -> None:
    dims = ModelDims(input_dim=2, features=2, state_size=2, depth=1, output_dim=2)
    model = _double_model(dims, seed=3)
    gen = torch.Generator().manual_seed(3)
    inputs = torch.randn(2, 3, 2, generator=gen, dtype=torch.float64)
    targets = torch.randn(2, 3, 2, generator=gen, dtype=torch.float64)

    analytic = backward(model, inputs, targets).grads
    eps = 1e-6
    for name, param in model.named_parameters():
        numeric = torch.zeros_like(param)
        flat = param.data.view(-1)
        for i in range(flat.numel()):
            original = float(flat[i])
            with torch.no_grad():
                flat[i] = original + eps
                up = compute_loss("regression", model(inputs), targets).item()
                flat[i] = original - eps
                down = compute_loss("regression", model(inputs), targets).item()
                flat[i] = original
            numeric.view(-1)[i] = (up - down) / (2 * eps)
        assert torch.allclose(analytic[name], numeric, rtol=1e-5, atol=1e-9), name


def test_straight_through_gradients_equal_float_gradients_on_grid_weights() -> None:
    model = _double_model(SMALL, seed=1, ops=FLOAT_OPS)
    quantized = EffectiveBits(weights=8)
    with torch.no_grad():
        for _, param, bits, _ in model.quantized_weights(quantized):
            if bits is not None:
                param.copy_(fake_quant_value(param, bits))
    gen = torch.Generator().manual_seed(1)
    inputs = torch.randn(3, 5, 10, generator=gen, dtype=torch.float64)
    targets = torch.randn(3, 5, 10, generator=gen, dtype=torch.float64)

    with_ste = backward(model, inputs, targets, bits=quantized)
    plain = backward(model, inputs, targets, bits=EffectiveBits())

    assert with_ste.loss == pytest.approx(plain.loss, rel=1e-12)
    for name, grad in plain.grads.items():
        assert torch.allclose(with_ste.grads[name], grad, rtol=1e-8, atol=1e-12), name


def test_zero_input_gives_zero_gradients() -> None:
    model = _double_model(SMALL)
    with torch.no_grad():
        for module in (model.encoder, model.decoder, *(block.gate for block in model.blocks)):
            module.bias.zero_()
    zeros = torch.zeros(2, 4, 10, dtype=torch.float64)

    result = backward(model, zeros, zeros)

    assert result.loss == 0.0
    assert all(int(torch.count_nonzero(grad)) == 0 for grad in result.grads.values())


def test_non_finite_gradient_names_the_parameter() -> None:
    model = S5Model(SMALL)
    with torch.no_grad():
        model.encoder.weight[0, 0] = float("nan")
    with pytest.raises(NonFiniteGradientError) as excinfo:
        backward(model, torch.ones(1, 3, 10), torch.zeros(1, 3, 10))
    assert excinfo.value.parameter == "encoder.weight"


# Adam ---------------------------------------------------------------------


def test_first_adam_step_moves_each_weight_by_lr() -> None:
    model = _double_model(SMALL)
    optimizer = make_optimizer(model, lr=0.01)
    before = {name: p.detach().clone() for name, p in model.named_parameters()}
    for p in model.parameters():
        p.grad = torch.full_like(p, 0.3)

    adam_step(optimizer)

    for name, p in model.named_parameters():
        moved = before[name] - p.detach()
        assert torch.allclose(moved, torch.full_like(moved, 0.01), rtol=1e-6), name


def test_zero_gradient_leaves_weights_unchanged() -> None:
    model = _double_model(SMALL)
    optimizer = make_optimizer(model, lr=0.01)
    before = [p.detach().clone() for p in model.parameters()]
    for p in model.parameters():
        p.grad = torch.zeros_like(p)
    adam_step(optimizer)
    assert all(torch.equal(a, p.detach()) for a, p in zip(before, model.parameters(), strict=True))


def test_two_adam_steps_follow_the_update_rule() -> None:
    model = _double_model(ModelDims(1, 1, 1, 1, 1))
    lr, wd, b1, b2, eps = 0.1, 0.01, 0.9, 0.999, 1e-8
    optimizer = make_optimizer(model, lr=lr, weight_decay=wd)
    p = float(model.encoder.weight)
    m = v = 0.0
    for t, g in enumerate((0.5, -0.2), start=1):
        for param in model.parameters():
            param.grad = torch.full_like(param, g)
        adam_step(optimizer)
        p *= 1 - lr * wd
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        denom = math.sqrt(v) / math.sqrt(1 - b2**t) + eps
        p -= lr / (1 - b1**t) * m / denom
    assert float(model.encoder.weight) == pytest.approx(p, rel=1e-9)


def test_adam_step_can_override_the_learning_rate() -> None:
    model = _double_model(ModelDims(1, 1, 1, 1, 1))
    optimizer = make_optimizer(model, lr=0.1)
    before = float(model.decoder.bias)
    for param in model.parameters():
        param.grad = torch.ones_like(param)
    adam_step(optimizer, lr=0.001)
    assert before - float(model.decoder.bias) == pytest.approx(0.001, rel=1e-5)


# Pipelines ----------------------------------------------------------------


def test_train_config_qaft_budget() -> None:
    cfg = TrainConfig(epochs=30, lr=0.01)
    assert cfg.qaft_epochs == 3
    assert cfg.qaft_lr == pytest.approx(1e-4)
    assert TrainConfig(epochs=5).qaft_epochs == 1
    assert TrainConfig(epochs=25).qaft_epochs == 3
    assert TrainConfig(epochs=20, qaft=QaftConfig(epoch_fraction=0.5)).qaft_epochs == 10
    with pytest.raises(ValueError):
        QaftConfig(lr_fraction=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_full_precision_training_is_deterministic(
    forecast_task: TaskData, quick_train: TrainConfig
) -> None:
    first = train_qat(quick_train, forecast_task, dims=SMALL)
    second = train_qat(quick_train, forecast_task, dims=SMALL)

    assert first.converged
    assert len(first.history) == 3
    assert first.history[0].lr == quick_train.lr
    assert [r.train_loss for r in first.history] == [r.train_loss for r in second.history]
    assert [r.eval_metric for r in first.history] == [r.eval_metric for r in second.history]
    assert first.best_metric == min(r.eval_metric for r in first.history)


def test_quantized_training_converges(forecast_task: TaskData, quick_train: TrainConfig) -> None:
    result = train_qat(replace(quick_train, quant="W8A8", epochs=2), forecast_task, dims=SMALL)
    assert result.converged
    assert result.model.qcfg.name == "W8A8"
    assert all(math.isfinite(r.train_loss) for r in result.history)
    assert 0.0 <= result.best_metric <= 200.0


def test_one_bit_abar_diverges_and_dumps_state(
    forecast_task: TaskData, quick_train: TrainConfig, tmp_path: Path
) -> None:
    result = train_qat(replace(quick_train, quant="Abar1"), forecast_task, dims=SMALL, out_dir=tmp_path)
    assert result.status == "diverged"
    assert not result.converged
    assert math.isnan(result.best_metric)
    assert (tmp_path / DIVERGED_DUMP).exists()


def test_runaway_loss_stops_as_unstable(forecast_task: TaskData) -> None:
    cfg = TrainConfig(epochs=5, batch_size=16, divergence_factor=1e-9, divergence_patience=2)
    result = train_qat(cfg, forecast_task, dims=SMALL)
    assert result.status == "unstable"
    assert len(result.history) == 2


def test_classification_training_reports_accuracy(toy_task: TaskData) -> None:
    result = train_qat(TrainConfig(epochs=2, batch_size=8), toy_task, dims=SMALL)
    assert result.model.task == "classification"
    assert all(0.0 <= r.eval_metric <= 1.0 for r in result.history)


def test_qaft_uses_a_fraction_of_the_budget(forecast_task: TaskData, quick_train: TrainConfig) -> None:
    base = train_qat(quick_train, forecast_task, dims=SMALL)
    cfg = replace(quick_train, epochs=20, quant="W8A8")
    seen: list[float] = []

    tuned = finetune_qaft(base.model, cfg, forecast_task, on_epoch=lambda r: seen.append(r.lr))

    assert len(tuned.history) == 2
    assert seen == [r.lr for r in tuned.history]
    assert tuned.history[0].lr == cfg.qaft_lr
    assert tuned.history[1].lr == pytest.approx(cfg.qaft_lr / 2)
    assert tuned.model.qcfg.name == "W8A8"
    assert base.model.qcfg.name == "FP"


def test_qaft_in_full_precision_barely_moves_the_metric(
    forecast_task: TaskData, quick_train: TrainConfig
) -> None:
    base = train_qat(quick_train, forecast_task, dims=SMALL)
    before = evaluate(base.model, forecast_task.test)
    tuned = finetune_qaft(base.model, quick_train, forecast_task)
    assert len(tuned.history) == 1
    assert abs(tuned.history[0].eval_metric - before) <= 0.05 * before + 0.5


def test_qaft_requires_a_full_precision_start(forecast_task: TaskData, quick_train: TrainConfig) -> None:
    model = S5Model(qcfg=parse_quant_config("W8A8"))
    with pytest.raises(ValueError):
        finetune_qaft(model, quick_train, forecast_task)


def test_ptq_in_full_precision_scores_like_the_original(
    forecast_task: TaskData, quick_train: TrainConfig
) -> None:
    base = train_qat(quick_train, forecast_task, dims=SMALL)
    _, metric = evaluate_ptq(base.model, parse_quant_config("FP"), forecast_task.test)
    assert metric == evaluate(base.model, forecast_task.test)


def test_ptq_ablation_covers_every_operator_row(
    forecast_task: TaskData, quick_train: TrainConfig
) -> None:
    base = train_qat(quick_train, forecast_task, dims=SMALL)
    rows = ptq_ablation(base.model, parse_quant_config("W8A8"), forecast_task.test)
    assert [row.label for row in rows] == list(ABLATION_ROWS)
    assert all(math.isfinite(row.metric) for row in rows)


def test_evaluation_scores_nan_when_quantization_breaks_down() -> None:
    model = S5Model(SMALL, qcfg=parse_quant_config("W8A8"))
    inputs = torch.full((2, 4, 10), float("nan"))
    assert math.isnan(evaluate(model, TensorSplit(inputs, torch.zeros(2, 4, 10))))
