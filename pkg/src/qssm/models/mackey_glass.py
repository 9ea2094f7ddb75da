# Filename: mackey_glass.py
# Author: Rich Lewis @RichLewis007
# Description: Mackey-Glass delay differential equation. Forward-Euler integration with a prefilled
#              history, a uniform delay embedding into several channels, CSV export, and the
#              windowed one-step-ahead forecasting dataset split into train/val/test runs of windows.

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Final

import numpy as np
import pandas as pd

from qssm.errors import GenerationError, InsufficientDataError

logger = logging.getLogger(__name__)

MAX_TAU: Final[float] = 100.0
SPLIT_FRACTIONS: Final[tuple[float, float]] = (0.8, 0.9)
SPLIT_NAMES: Final[tuple[str, str, str]] = ("train", "val", "test")


@dataclass(frozen=True, slots=True)
class MackeyGlassConfig:
    """Integration settings for Q'(t) = beta Q(t-tau) / (1 + Q(t-tau)^n) - gamma Q(t).

    ``initial_history`` replaces the random history on [-tau, 0] with a
    constant; otherwise the history is uniform in [0.5, 1.5] drawn from
    ``seed``.
    """

    tau: float = 17.0
    beta: float = 0.2
    gamma: float = 0.1
    n_exp: float = 10.0
    dt: float = 1.0
    steps: int = 1024
    transient: int = 500
    seed: int = 0
    channels: int = 10
    initial_history: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= MAX_TAU:
            raise ValueError(f"tau must lie in [0, {MAX_TAU:g}], got {self.tau}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.steps < 1:
            raise ValueError(f"steps must be positive, got {self.steps}")
        if self.channels < 1:
            raise ValueError(f"channels must be positive, got {self.channels}")
        if self.transient < self.lag:
            raise ValueError(
                f"transient ({self.transient}) must cover the delay of {self.lag} steps"
            )
        if self.initial_history is not None and self.initial_history <= 0:
            raise ValueError("initial_history must be positive")

    @property
    def lag(self) -> int:
        # History length in steps, ceil(tau / dt).
        return math.ceil(self.tau / self.dt)

    @property
    def tap_delays(self) -> tuple[float, ...]:
        if self.channels == 1:
            return (0.0,)
        return tuple(j * self.tau / (self.channels - 1) for j in range(self.channels))

    def fingerprint(self) -> str:
        canonical = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True, slots=True)
class MackeyGlassSeries:
    # Delay-embedded trajectory, one row per output step and one column per tap.

    data: np.ndarray
    config: MackeyGlassConfig

    @property
    def times(self) -> np.ndarray:
        cfg = self.config
        return (cfg.transient + np.arange(cfg.steps)) * cfg.dt

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.data, columns=[f"c{j}" for j in range(self.data.shape[1])])
        frame.insert(0, "t", self.times)
        return frame

    def to_csv(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path


def _delayed(trajectory: np.ndarray, index: int, delay_steps: float) -> float:
    # Sample at fractional position index - delay_steps, linearly interpolated.
    pos = index - delay_steps
    lo = math.floor(pos)
    frac = pos - lo
    if frac == 0.0:
        return float(trajectory[lo])
    return float((1.0 - frac) * trajectory[lo] + frac * trajectory[lo + 1])


def integrate(cfg: MackeyGlassConfig) -> np.ndarray:
    """Scalar trajectory including the prefilled history.

    Element ``i`` holds Q at time ``(i - lag) * dt``; the array runs until the
    last output step.
    """
    lag = cfg.lag
    total = lag + cfg.transient + cfg.steps
    trajectory = np.empty(total, dtype=np.float64)
    if cfg.initial_history is not None:
        trajectory[: lag + 1] = cfg.initial_history
    else:
        rng = np.random.default_rng(cfg.seed)
        trajectory[: lag + 1] = rng.uniform(0.5, 1.5, size=lag + 1)

    delay_steps = cfg.tau / cfg.dt
    for i in range(lag, total - 1):
        q = trajectory[i]
        q_tau = _delayed(trajectory, i, delay_steps)
        nxt = q + cfg.dt * (cfg.beta * q_tau / (1.0 + q_tau**cfg.n_exp) - cfg.gamma * q)
        if not math.isfinite(nxt):
            raise GenerationError("non-finite Mackey-Glass state", step=i - lag + 1)
        if nxt <= 0.0:
            raise GenerationError(f"non-positive Mackey-Glass state {nxt:g}", step=i - lag + 1)
        trajectory[i + 1] = nxt
    return trajectory


def generate_mackey_glass(cfg: MackeyGlassConfig) -> MackeyGlassSeries:
    # Integrate, drop the transient and embed with taps at j * tau / (channels - 1).
    trajectory = integrate(cfg)
    first = cfg.lag + cfg.transient
    data = np.empty((cfg.steps, cfg.channels), dtype=np.float64)
    for j, delay in enumerate(cfg.tap_delays):
        delay_steps = delay / cfg.dt
        data[:, j] = [_delayed(trajectory, first + k, delay_steps) for k in range(cfg.steps)]
    logger.info(
        "Generated Mackey-Glass series tau=%g steps=%d channels=%d (%s)",
        cfg.tau,
        cfg.steps,
        cfg.channels,
        cfg.fingerprint(),
    )
    return MackeyGlassSeries(data=data, config=cfg)


@dataclass(frozen=True, slots=True)
class WindowSet:
    # Shifted windows: targets are the inputs advanced by the horizon.

    inputs: np.ndarray  # (N, context_len, channels)
    targets: np.ndarray  # (N, context_len, channels)

    def __len__(self) -> int:
        return int(self.inputs.shape[0])


@dataclass(frozen=True, slots=True)
class ForecastDataset:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    fingerprint: str = ""
    boundaries: tuple[int, int] = field(default=(0, 0))

    def split(self, name: str) -> WindowSet:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLIT_NAMES}")
        windows: WindowSet = getattr(self, name)
        return windows


def count_windows(length: int, context_len: int, horizon: int, stride: int = 1) -> int:
    span = length - context_len - horizon
    return span // stride + 1 if span >= 0 else 0


def make_windows(data: np.ndarray, context_len: int, horizon: int = 1, stride: int = 1) -> WindowSet:
    # Sliding windows over contiguous rows.
    if context_len < 1 or horizon < 1 or stride < 1:
        raise ValueError("context_len, horizon and stride must be positive")
    count = count_windows(len(data), context_len, horizon, stride)
    if count == 0:
        raise InsufficientDataError(
            f"{len(data)} rows cannot hold a window of {context_len} + {horizon}"
        )
    starts = np.arange(count) * stride
    offsets = np.arange(context_len)
    inputs = data[starts[:, None] + offsets[None, :]]
    targets = data[starts[:, None] + offsets[None, :] + horizon]
    return WindowSet(inputs=inputs.astype(np.float32), targets=targets.astype(np.float32))


def make_forecast_dataset(
    series: MackeyGlassSeries,
    context_len: int,
    horizon: int = 1,
    *,
    stride: int = 1,
) -> ForecastDataset:
    """Window the whole series, then split the windows 80/10/10 in order.

    The split is over window indices, so each split is a contiguous run of
    windows and no window belongs to two splits. ``boundaries`` holds the
    first window index of the val and test splits. Every split must hold at
    least one window.
    """
    n = series.data.shape[0]
    if context_len + horizon > n:
        raise InsufficientDataError(
            f"series of {n} steps is shorter than context {context_len} + horizon {horizon}"
        )
    everything = make_windows(series.data, context_len, horizon, stride)
    total = len(everything)
    cut_val, cut_test = (int(fraction * total) for fraction in SPLIT_FRACTIONS)
    ranges = {"train": (0, cut_val), "val": (cut_val, cut_test), "test": (cut_test, total)}
    windows: dict[str, WindowSet] = {}
    for name, (start, stop) in ranges.items():
        if stop <= start:
            raise InsufficientDataError(
                f"{name} split is empty: {total} windows of {context_len} + {horizon} "
                f"at stride {stride} over {n} steps"
            )
        windows[name] = WindowSet(
            inputs=everything.inputs[start:stop], targets=everything.targets[start:stop]
        )
    logger.debug(
        "Forecast windows train=%d val=%d test=%d",
        len(windows["train"]),
        len(windows["val"]),
        len(windows["test"]),
    )
    return ForecastDataset(
        train=windows["train"],
        val=windows["val"],
        test=windows["test"],
        fingerprint=series.fingerprint,
        boundaries=(cut_val, cut_test),
    )


__all__ = [
    "MAX_TAU",
    "ForecastDataset",
    "MackeyGlassConfig",
    "MackeyGlassSeries",
    "WindowSet",
    "count_windows",
    "generate_mackey_glass",
    "integrate",
    "make_forecast_dataset",
    "make_windows",
]
