# Filename: errors.py
# Author: Rich Lewis @RichLewis007
# Description: Exception hierarchy for qssm. Every error also derives from the closest builtin
#              so callers can catch either the library type or the standard one.

from __future__ import annotations

from pathlib import Path


class QssmError(Exception):
    # Base class for all library errors.
    pass


class QuantizationError(QssmError, ValueError):
    # Invalid quantizer input: non-finite values or an unsupported bit width.
    pass


class AccumulatorOverflowError(QssmError, ArithmeticError):
    # An integer dot product could exceed the signed 32-bit accumulator range.
    pass


class QuantConfigError(QssmError, ValueError):
    # A quantization configuration name does not follow the grammar.

    def __init__(self, message: str, *, suggestion: str | None = None) -> None:
        if suggestion:
            message = f"{message} (did you mean {suggestion!r}?)"
        super().__init__(message)
        self.suggestion = suggestion


class ShapeMismatchError(QssmError, ValueError):
    # Tensor shapes do not conform for the requested operation.
    pass


class SingularDiscretizationError(QssmError, ArithmeticError):
    # Zero-order hold needs every continuous-time eigenvalue to be non-zero.
    pass


class ParallelScanError(QssmError, ValueError):
    # The parallel scan cannot reproduce per-step state quantization.
    pass


class IntegerPathError(QssmError, ValueError):
    # Integer inference needs every weight and activation quantized.
    pass


class ModelFormatError(QssmError, OSError):
    # A model file is truncated, corrupted or written by an unknown format version.
    pass


class NonFiniteGradientError(QssmError, ArithmeticError):
    # A parameter received a NaN or infinite gradient.

    def __init__(self, parameter: str) -> None:
        super().__init__(f"Non-finite gradient for parameter {parameter!r}")
        self.parameter = parameter


class TrainingDivergedError(QssmError, RuntimeError):
    # Training loss became non-finite; the state may have been dumped to disk.

    def __init__(self, message: str, *, epoch: int, dump_path: Path | None = None) -> None:
        if dump_path is not None:
            message = f"{message}; state dumped to {dump_path}"
        super().__init__(message)
        self.epoch = epoch
        self.dump_path = dump_path


class GenerationError(QssmError, ArithmeticError):
    # The Mackey-Glass integrator produced an invalid state.

    def __init__(self, message: str, *, step: int) -> None:
        super().__init__(f"{message} at step {step}")
        self.step = step


class InsufficientDataError(QssmError, ValueError):
    # A series is too short for the requested windows.
    pass


class ConfigError(QssmError, ValueError):
    # An experiment configuration file has unknown keys or invalid values.

    def __init__(self, message: str, *, suggestion: str | None = None) -> None:
        if suggestion:
            message = f"{message} (did you mean {suggestion!r}?)"
        super().__init__(message)
        self.suggestion = suggestion


__all__ = [
    "AccumulatorOverflowError",
    "ConfigError",
    "GenerationError",
    "InsufficientDataError",
    "IntegerPathError",
    "ModelFormatError",
    "NonFiniteGradientError",
    "ParallelScanError",
    "QssmError",
    "QuantConfigError",
    "QuantizationError",
    "ShapeMismatchError",
    "SingularDiscretizationError",
    "TrainingDivergedError",
]
