# Filename: config.py
# Author: Rich Lewis @RichLewis007
# Description: Experiment configuration. Dataclass sections mirrored by a TOML file that every
#              command reads with --config and writes back fully resolved as config.toml, plus
#              the platform directories used for logs and default run outputs.

from __future__ import annotations

import dataclasses
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Final, Literal, TypeVar

import tomli_w
from platformdirs import PlatformDirs
from rapidfuzz import process

from qssm.errors import ConfigError, QuantConfigError
from qssm.models.mackey_glass import MackeyGlassConfig
from qssm.models.network import ModelDims, OpsConfig
from qssm.models.quant_config import parse_quant_config
from qssm.models.ssm import Readout, ScanMode
from qssm.models.tasks import ToyTaskConfig
from qssm.workers.trainer import QaftConfig, TrainConfig

APP_NAME = "QuantizedS5"
ORG_NAME = "Rich Lewis"
CONFIG_FILENAME: Final[str] = "config.toml"

TaskName = Literal["mackey_glass", "toy_classification"]
TASK_NAMES: Final[tuple[str, ...]] = ("mackey_glass", "toy_classification")
AblationMode = Literal["ptq", "qat"]
ABLATION_MODES: Final[tuple[str, ...]] = ("ptq", "qat")

_T = TypeVar("_T")


def app_dirs() -> PlatformDirs:
    return PlatformDirs(appname=APP_NAME, appauthor=ORG_NAME)


def ensure_app_dirs() -> Path:
    # Ensure the configuration directories exist and return the config path.
    dirs = app_dirs()
    config_path = Path(dirs.user_config_dir)
    log_path = Path(dirs.user_log_dir)
    data_path = Path(dirs.user_data_dir)

    for path in (config_path, log_path, data_path):
        path.mkdir(parents=True, exist_ok=True)

    return config_path


def default_output_root() -> Path:
    return Path(app_dirs().user_data_dir) / "runs"


@dataclass(frozen=True, slots=True)
class ModelSection:
    h: int = 4
    p: int = 12
    depth: int = 2
    readout: Readout = "current"
    scan: ScanMode = "auto"

    def __post_init__(self) -> None:
        if self.readout not in ("current", "previous"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.scan not in ("auto", "sequential", "parallel"):
            raise ValueError(f"unknown scan mode {self.scan!r}")

    def dims(self) -> ModelDims:
        # Input and output sizes are filled in from the task.
        return ModelDims(features=self.h, state_size=self.p, depth=self.depth)


@dataclass(frozen=True, slots=True)
class ForecastSection:
    context_len: int = 64
    horizon: int = 1
    stride: int = 4


@dataclass(frozen=True, slots=True)
class SweepSection:
    taus: tuple[float, ...] = (17.0,)
    quants: tuple[str, ...] = ("FP",)
    seeds: tuple[int, ...] = (0,)
    workers: int = 1

    def __post_init__(self) -> None:
        for name in ("taus", "quants", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        for quant in self.quants:
            parse_quant_config(quant)


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    task: TaskName = "mackey_glass"
    output_dir: str = ""
    # Input model for ptq, qaft, eval and PTQ ablations.
    model_path: str = ""
    ablation_mode: AblationMode = "ptq"
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    mackey_glass: MackeyGlassConfig = field(default_factory=MackeyGlassConfig)
    toy: ToyTaskConfig = field(default_factory=ToyTaskConfig)
    forecast: ForecastSection = field(default_factory=ForecastSection)
    ops: OpsConfig = field(default_factory=OpsConfig)
    sweep: SweepSection = field(default_factory=SweepSection)

    def __post_init__(self) -> None:
        if self.task not in TASK_NAMES:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASK_NAMES}")
        if self.ablation_mode not in ABLATION_MODES:
            raise ConfigError(
                f"unknown ablation mode {self.ablation_mode!r}; expected one of {ABLATION_MODES}"
            )
        try:
            parse_quant_config(self.train.quant)
        except QuantConfigError as exc:
            raise ConfigError(f"train.quant: {exc}") from exc

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir) if self.output_dir else default_output_root()


# Nested sections and the dataclass each one builds.
_SECTIONS: Final[dict[str, type[Any]]] = {
    "model": ModelSection,
    "train": TrainConfig,
    "mackey_glass": MackeyGlassConfig,
    "toy": ToyTaskConfig,
    "forecast": ForecastSection,
    "ops": OpsConfig,
    "qaft": QaftConfig,
    "sweep": SweepSection,
}


def _to_table(obj: Any) -> dict[str, Any]:
    # Dataclass to TOML table; None values are omitted and take their default on load.
    table: dict[str, Any] = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if value is None:
            continue
        if dataclasses.is_dataclass(value):
            table[f.name] = _to_table(value)
        elif isinstance(value, tuple):
            table[f.name] = list(value)
        else:
            table[f.name] = value
    return table


def _coerce(annotation: Any, value: Any) -> Any:
    # TOML integers stand in for floats; keep them floats so fingerprints are stable.
    # TOML arrays load as lists and map onto tuple fields.
    if isinstance(value, list):
        return tuple(_coerce(annotation, item) for item in value)
    if isinstance(value, int) and not isinstance(value, bool) and "float" in str(annotation):
        return float(value)
    return value


def _build(cls: type[_T], table: Any, where: str) -> _T:
    where = where or "top level"
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}  # type: ignore[arg-type]
    kwargs: dict[str, Any] = {}
    for key, value in table.items():
        if key not in known:
            match = process.extractOne(key, list(known), score_cutoff=60)
            raise ConfigError(
                f"unknown key {key!r} in [{where}]", suggestion=match[0] if match else None
            )
        if key in _SECTIONS:
            nested = key if where == "top level" else f"{where}.{key}"
            kwargs[key] = _build(_SECTIONS[key], value, nested)
        else:
            kwargs[key] = _coerce(known[key].type, value)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{where}] section: {exc}") from exc


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return _to_table(cfg)


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def load_experiment_config(path: Path) -> ExperimentConfig:
    # Missing keys take defaults; unknown keys are an error.
    with path.open("rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def save_experiment_config(cfg: ExperimentConfig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        tomli_w.dump(config_to_dict(cfg), fh)
    return path


__all__ = [
    "APP_NAME",
    "CONFIG_FILENAME",
    "ORG_NAME",
    "ExperimentConfig",
    "ForecastSection",
    "ModelSection",
    "SweepSection",
    "config_from_dict",
    "config_to_dict",
    "default_output_root",
    "ensure_app_dirs",
    "load_experiment_config",
    "save_experiment_config",
]
