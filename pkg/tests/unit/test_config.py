"""Tests for experiment configuration files."""

from __future__ import annotations

from pathlib import Path

import pytest

from qssm.errors import ConfigError
from qssm.models.mackey_glass import MackeyGlassConfig
from qssm.services.config import (
    ExperimentConfig,
    SweepSection,
    config_from_dict,
    config_to_dict,
    default_output_root,
    load_experiment_config,
    save_experiment_config,
)
from qssm.workers.trainer import QaftConfig, TrainConfig


def test_default_config_round_trips(tmp_path: Path) -> None:
    cfg = ExperimentConfig()
    path = save_experiment_config(cfg, tmp_path / "config.toml")
    assert load_experiment_config(path) == cfg


def test_customized_config_round_trips(tmp_path: Path, tiny_experiment: ExperimentConfig) -> None:
    cfg = ExperimentConfig(
        task="toy_classification",
        output_dir=str(tmp_path / "runs"),
        model=tiny_experiment.model,
        train=TrainConfig(epochs=7, quant="W4A8SSM8", qaft=QaftConfig(enabled=True)),
        mackey_glass=MackeyGlassConfig(tau=25.0, initial_history=1.0),
        toy=tiny_experiment.toy,
        forecast=tiny_experiment.forecast,
    )
    path = save_experiment_config(cfg, tmp_path / "config.toml")
    loaded = load_experiment_config(path)
    assert loaded == cfg
    assert loaded.output_path == tmp_path / "runs"


def test_missing_keys_take_defaults() -> None:
    cfg = config_from_dict({"train": {"epochs": 3}})
    assert cfg.train.epochs == 3
    assert cfg.train.lr == TrainConfig().lr
    assert cfg.mackey_glass == MackeyGlassConfig()


def test_integer_values_for_float_fields_keep_the_fingerprint() -> None:
    cfg = config_from_dict({"mackey_glass": {"tau": 17}})
    assert isinstance(cfg.mackey_glass.tau, float)
    assert cfg.mackey_glass.fingerprint() == MackeyGlassConfig().fingerprint()


def test_none_values_are_omitted_from_the_table() -> None:
    table = config_to_dict(ExperimentConfig())
    assert "initial_history" not in table["mackey_glass"]
    assert table["train"]["qaft"]["lr_fraction"] == 0.01


def test_unknown_key_suggests_the_closest_name() -> None:
    with pytest.raises(ConfigError) as excinfo:
        config_from_dict({"train": {"epoch": 3}})
    assert excinfo.value.suggestion == "epochs"
    assert "[train]" in str(excinfo.value)


def test_invalid_values_become_config_errors() -> None:
    with pytest.raises(ConfigError):
        config_from_dict({"mackey_glass": {"tau": -1.0}})
    with pytest.raises(ConfigError, match="train.quant"):
        config_from_dict({"train": {"quant": "W4A8SSM"}})
    with pytest.raises(ConfigError):
        config_from_dict({"task": "speech"})
    with pytest.raises(ConfigError):
        config_from_dict({"model": 3})


def test_malformed_toml_is_a_config_error(tmp_path: Path) -> None:
    path = tmp_path / "broken.toml"
    path.write_text("[train\nepochs = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_experiment_config(path)


def test_default_output_root_lives_under_the_data_dir() -> None:
    assert default_output_root().name == "runs"
    assert ExperimentConfig().output_path == default_output_root()


def test_sweep_and_input_model_round_trip(tmp_path: Path) -> None:
    cfg = ExperimentConfig(
        model_path="runs/fp/model.qssm",
        ablation_mode="qat",
        sweep=SweepSection(taus=(5.0, 25.0), quants=("FP", "Abar4"), seeds=(0, 1, 2), workers=2),
    )
    path = save_experiment_config(cfg, tmp_path / "config.toml")
    assert load_experiment_config(path) == cfg
    assert config_to_dict(cfg)["sweep"]["taus"] == [5.0, 25.0]


def test_sweep_lists_load_as_tuples() -> None:
    cfg = config_from_dict({"sweep": {"taus": [5, 25], "seeds": [3]}})
    assert cfg.sweep.taus == (5.0, 25.0)
    assert all(isinstance(tau, float) for tau in cfg.sweep.taus)
    assert cfg.sweep.seeds == (3,)
    assert cfg.sweep.quants == SweepSection().quants


def test_invalid_sweep_sections_become_config_errors() -> None:
    with pytest.raises(ConfigError):
        config_from_dict({"sweep": {"taus": []}})
    with pytest.raises(ConfigError):
        config_from_dict({"sweep": {"workers": 0}})
    with pytest.raises(ConfigError):
        config_from_dict({"sweep": {"quants": ["Abar"]}})
    with pytest.raises(ConfigError):
        config_from_dict({"ablation_mode": "both"})
