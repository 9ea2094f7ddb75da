# Filename: qops.py
# Author: Rich Lewis @RichLewis007
# Description: Quantization-friendly operator replacements: qGELU (a ReLU4-based GELU surrogate
#              whose division is a right shift), hard sigmoid, and quantized layer normalization.

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from qssm.errors import ShapeMismatchError

from .arithmetic import Arithmetic, Coded, IntegerArithmetic, SimulatedArithmetic
from .quant import QTensor, compute_scale, quantize

LAYER_NORM_EPS = 1e-5


@dataclass(frozen=True, slots=True)
class QGeluSpec:
    # Shifted and bounded ReLU parametrization: x * clamp(x + shift, 0, ceiling) / ceiling.

    shift: float = 2.0
    ceiling: float = 4.0
    input_bits: int = 8

    def __post_init__(self) -> None:
        ceiling = int(self.ceiling)
        if ceiling != self.ceiling or ceiling < 2 or ceiling & (ceiling - 1):
            raise ValueError(f"qGELU ceiling must be a power of two >= 2, got {self.ceiling}")
        if self.shift != self.ceiling / 2:
            raise ValueError("qGELU shift must be half the ceiling")

    @property
    def shift_bits(self) -> int:
        # Right-shift amount replacing the division by the ceiling.
        return int(self.ceiling).bit_length() - 1


DEFAULT_QGELU = QGeluSpec()


def qgelu_ref(x: Tensor, spec: QGeluSpec = DEFAULT_QGELU) -> Tensor:
    # Real-valued reference qGELU.
    return x * torch.clamp(x + spec.shift, 0.0, spec.ceiling) / spec.ceiling


def qgelu(q: QTensor, spec: QGeluSpec = DEFAULT_QGELU) -> QTensor:
    """Evaluate qGELU on an integer payload and requantize at the input width.

    The kernel runs entirely on integer codes; only the final requantization
    goes through real units.
    """
    scale = torch.tensor(q.scale, dtype=torch.float64)
    coded = Coded(q.values.to(torch.int64), scale)
    arith = IntegerArithmetic(dtype=torch.float64)
    out = arith.qgelu_codes(coded, shift=spec.shift, ceiling=spec.ceiling)
    return quantize(out, q.bits)


def qgelu_curve(bits: int, xs: Tensor, spec: QGeluSpec = DEFAULT_QGELU) -> Tensor:
    """qGELU evaluated on inputs quantized at ``bits``, in real units.

    The scale comes from ``max|xs|``, so a fixed input grid shows how the
    curve degrades as the input bit width shrinks.
    """
    xs = xs.to(torch.float64)
    arith = IntegerArithmetic(dtype=torch.float64)
    coded = arith.code(xs, bits)
    return arith.qgelu_codes(coded, shift=spec.shift, ceiling=spec.ceiling)


def qgelu_activation(
    x: Tensor,
    bits: int | None,
    arith: Arithmetic,
    spec: QGeluSpec = DEFAULT_QGELU,
) -> Tensor:
    # Model-facing qGELU: integer kernel on coded input, requantized at the same width.
    if bits is None:
        return qgelu_ref(x, spec)
    out = arith.qgelu_codes(arith.code(x, bits), shift=spec.shift, ceiling=spec.ceiling)
    return arith.fake_quant(out, bits)


def hard_sigmoid(x: Tensor) -> Tensor:
    return F.relu6(x + 3.0) / 6.0


def normalize_quantized(
    x: Tensor,
    abits: int | None,
    *,
    arith: Arithmetic | None = None,
    eps: float = LAYER_NORM_EPS,
) -> Tensor:
    """Normalize each feature vector using integer-accumulated statistics.

    ``x`` is coded at ``abits`` first; the mean and variance come from the
    sums of codes and of squared codes, so both back ends see the same
    statistics.
    """
    arith = arith or SimulatedArithmetic()
    features = x.shape[-1]
    coded = arith.code(x, abits)
    mean = arith.feature_sum(coded) / features
    var = torch.clamp(arith.feature_sum_sq(coded) / features - mean * mean, min=0.0)
    return (coded.value() - mean) / torch.sqrt(var + eps)


def quant_layer_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    wbits: int | None,
    abits: int | None,
    *,
    arith: Arithmetic | None = None,
    eps: float = LAYER_NORM_EPS,
) -> Tensor:
    # Layer norm with quantized input, quantized affine parameters and quantized output.
    if gamma.shape != beta.shape or gamma.shape[-1:] != x.shape[-1:]:
        raise ShapeMismatchError(
            f"layer norm over {x.shape[-1]} features got gamma {tuple(gamma.shape)} "
            f"and beta {tuple(beta.shape)}"
        )
    arith = arith or SimulatedArithmetic()
    normalized = normalize_quantized(x, abits, arith=arith, eps=eps)
    gamma_q = arith.fake_quant(gamma, wbits)
    beta_q = arith.fake_quant(beta, wbits)
    return arith.fake_quant(normalized * gamma_q + beta_q, abits)


def output_step(x: Tensor, bits: int) -> float:
    # Quantization step of a tensor at the given width.
    return 1.0 / float(compute_scale(x, bits))


__all__ = [
    "DEFAULT_QGELU",
    "LAYER_NORM_EPS",
    "QGeluSpec",
    "hard_sigmoid",
    "normalize_quantized",
    "output_step",
    "qgelu",
    "qgelu_activation",
    "qgelu_curve",
    "quant_layer_norm",
    "qgelu_ref",
]
