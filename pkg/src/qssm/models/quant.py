# Filename: quant.py
# Author: Rich Lewis @RichLewis007
# Description: Dynamic symmetric per-tensor quantization primitives. Provides scale computation,
#              integer quantization, fake quantization with straight-through gradients, complex
#              quantization with a shared scale, and int32-checked integer dot products.

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Final, Literal, NamedTuple

import torch
from torch import Tensor

from qssm.errors import AccumulatorOverflowError, QuantizationError, ShapeMismatchError

MIN_BITS: Final[int] = 1
MAX_BITS: Final[int] = 16
INT32_MAX: Final[int] = 2**31 - 1
_SCALE_SNAP_ROUNDS: Final[int] = 16

QuantMode = Literal["weight", "activation"]


def check_bits(bits: int) -> int:
    # Validate a bit width and return it unchanged.
    if isinstance(bits, bool) or not isinstance(bits, int) or not MIN_BITS <= bits <= MAX_BITS:
        raise QuantizationError(f"bit width must be an integer in [{MIN_BITS}, {MAX_BITS}], got {bits!r}")
    return bits


def qmax(bits: int) -> int:
    # Largest integer code of the symmetric range; 1 bit leaves only zero.
    return (1 << (check_bits(bits) - 1)) - 1


def payload_dtype(bits: int) -> torch.dtype:
    # Smallest signed integer type that holds every code of the range.
    return torch.int8 if check_bits(bits) <= 8 else torch.int16


def round_half_away(x: Tensor) -> Tensor:
    """Round to the nearest integer, ties away from zero.

    Unlike ``torch.round`` (ties to even) this is an odd function, so
    quantizing ``-x`` gives exactly the negated codes of ``x``.
    """
    return torch.sign(x) * torch.floor(torch.abs(x) + 0.5)


@dataclass(frozen=True, slots=True)
class QuantSpec:
    # Bit width and role of a quantized tensor.

    bits: int
    mode: QuantMode = "weight"

    def __post_init__(self) -> None:
        check_bits(self.bits)

    @property
    def qmax(self) -> int:
        return qmax(self.bits)

    @property
    def int_range(self) -> tuple[int, int]:
        # Inclusive integer range; -2**(bits-1) is never produced.
        return -self.qmax, self.qmax


@dataclass(frozen=True, slots=True)
class QTensor:
    # Integer payload with its per-tensor scale; dequantized value is values / scale.

    values: Tensor
    scale: float
    bits: int

    def __post_init__(self) -> None:
        check_bits(self.bits)
        if self.values.is_floating_point() or self.values.is_complex():
            raise QuantizationError("QTensor values must be an integer tensor")
        if not self.scale >= 0.0:
            raise QuantizationError(f"scale must be non-negative, got {self.scale}")
        limit = qmax(self.bits)
        if self.values.numel() and int(self.values.abs().max()) > limit:
            raise QuantizationError(f"values exceed the symmetric {self.bits}-bit range")

    @property
    def step(self) -> float:
        # Quantization step size (1 / scale).
        return 1.0 / self.scale if self.scale else float("inf")

    @property
    def nbytes(self) -> int:
        return self.values.numel() * self.values.element_size()


@dataclass(frozen=True, slots=True)
class QComplexTensor:
    # Real and imaginary payloads quantized with one shared scale.

    re: QTensor
    im: QTensor

    def __post_init__(self) -> None:
        if self.re.bits != self.im.bits or self.re.scale != self.im.scale:
            raise QuantizationError("real and imaginary parts must share bits and scale")
        if self.re.values.shape != self.im.values.shape:
            raise ShapeMismatchError("real and imaginary payloads differ in shape")

    @property
    def shared_scale(self) -> float:
        return self.re.scale

    @property
    def bits(self) -> int:
        return self.re.bits

    @property
    def nbytes(self) -> int:
        return self.re.nbytes + self.im.nbytes


class Accumulation(NamedTuple):
    # Exact integer accumulator and the scale that converts it back to real units.

    accumulator: Tensor
    combined_scale: float

    def dequantize(self) -> Tensor:
        return self.accumulator.to(torch.float64) / self.combined_scale


def _require_finite(x: Tensor) -> None:
    if not bool(torch.isfinite(x).all()):
        raise QuantizationError("cannot quantize a tensor with non-finite values")


def compute_scale(x: Tensor, bits: int) -> Tensor:
    """Return the dynamic per-tensor scale ``(2**(bits-1) - 1) / max|x|``.

    The scale is a detached 0-d tensor in ``x``'s floating dtype. An all-zero
    tensor gets scale 1 so dead channels never divide by zero.

    The quotient is then moved by at most a few ulps to a fixed point of
    ``s -> qmax / (qmax / s)``. The largest dequantized code ``qmax / s``
    then maps back to the same scale, which makes ``dequantize(quantize(x))``
    bit-exactly idempotent.

    At ``bits == 1`` the symmetric range is empty and the scale is 0, so
    dequantization yields NaN: a 1-bit component poisons the forward pass and
    training reports it as non-converged.
    """
    q = qmax(bits)
    x = x.detach()
    _require_finite(x)
    dtype = x.dtype if x.is_floating_point() else torch.float64
    max_abs = x.abs().max().to(dtype) if x.numel() else torch.zeros((), dtype=dtype)
    if float(max_abs) == 0.0:
        return torch.ones((), dtype=dtype, device=x.device)
    top = torch.as_tensor(q, dtype=dtype, device=x.device)
    scale = top / max_abs
    if q == 0:
        return scale
    for _ in range(_SCALE_SNAP_ROUNDS):
        snapped = top / (top / scale)
        if bool(snapped == scale):
            break
        scale = snapped
    return scale


def quantize(x: Tensor, bits: int) -> QTensor:
    # Quantize a real tensor to a symmetric integer payload with its own scale.
    scale = compute_scale(x, bits)
    q = qmax(bits)
    codes = round_half_away(x.detach().to(scale.dtype) * scale).clamp(-q, q)
    return QTensor(values=codes.to(payload_dtype(bits)), scale=float(scale), bits=bits)


def dequantize(q: QTensor, dtype: torch.dtype = torch.float64) -> Tensor:
    # Map an integer payload back to real units.
    return q.values.to(dtype) / q.scale


def quantize_complex(x: Tensor, bits: int) -> QComplexTensor:
    # Quantize real and imaginary parts with the scale of the larger component maximum.
    parts = torch.stack([x.real, x.imag]).detach()
    scale = compute_scale(parts, bits)
    q = qmax(bits)
    payloads = [
        QTensor(
            values=round_half_away(part * scale).clamp(-q, q).to(payload_dtype(bits)),
            scale=float(scale),
            bits=bits,
        )
        for part in parts
    ]
    return QComplexTensor(re=payloads[0], im=payloads[1])


def dequantize_complex(q: QComplexTensor, dtype: torch.dtype = torch.float64) -> Tensor:
    return torch.complex(dequantize(q.re, dtype), dequantize(q.im, dtype))


def fake_quant_value(x: Tensor, bits: int) -> Tensor:
    """Forward value of fake quantization, without gradient bookkeeping.

    Bit-identical to ``dequantize(quantize(x, bits), x.dtype)``.
    """
    x = x.detach()
    scale = compute_scale(x, bits)
    q = qmax(bits)
    codes = round_half_away(x * scale).clamp(-q, q)
    # An empty 1-bit grid gives 0/0 here.
    return codes / scale


class _FakeQuantSTE(torch.autograd.Function):
    # Fake quantization whose Jacobian is the identity (straight-through estimator).

    @staticmethod
    def forward(ctx: Any, x: Tensor, bits: int, grad_bits: int | None) -> Tensor:  # type: ignore[override]
        ctx.grad_bits = grad_bits
        return fake_quant_value(x, bits)

    @staticmethod
    def backward(ctx: Any, grad: Tensor) -> tuple[Tensor, None, None]:  # type: ignore[override]
        if ctx.grad_bits is not None:
            grad = fake_quant_value(grad, ctx.grad_bits)
        return grad, None, None


def fake_quant(x: Tensor, bits: int, *, grad_bits: int | None = None) -> Tensor:
    """Quantize-then-dequantize ``x`` while passing gradients straight through.

    ``grad_bits`` optionally fake-quantizes the incoming gradient in the
    backward pass as well.
    """
    check_bits(bits)
    out: Tensor = _FakeQuantSTE.apply(x, bits, grad_bits)
    return out


def fake_quant_complex(z: Tensor, bits: int, *, grad_bits: int | None = None) -> Tensor:
    # Complex fake quantization with one shared scale over both components.
    parts = torch.stack([z.real, z.imag])
    snapped = fake_quant(parts, bits, grad_bits=grad_bits)
    return torch.complex(snapped[0], snapped[1])


def int_matmul(a: Tensor, b: Tensor) -> Tensor:
    """Integer matrix product with a proven-safe int32 accumulator.

    Accumulation runs in int64; the bound ``sum |a| |b|`` must fit in int32,
    which rules out overflow of every partial sum in any summation order.
    """
    if a.is_floating_point() or b.is_floating_point():
        raise QuantizationError("int_matmul expects integer tensors")
    a64 = a.to(torch.int64)
    b64 = b.to(torch.int64)
    inner_b = b64.shape[0] if b64.dim() == 1 else b64.shape[-2]
    if a64.shape[-1] != inner_b:
        raise ShapeMismatchError(f"inner dimensions differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    bound = torch.matmul(a64.abs(), b64.abs())
    if bound.numel() and int(bound.max()) > INT32_MAX:
        raise AccumulatorOverflowError(
            f"dot product bound {int(bound.max())} exceeds the int32 accumulator"
        )
    return torch.matmul(a64, b64).to(torch.int32)


def qdot(a: QTensor, b: QTensor) -> Accumulation:
    # Integer dot/matrix product of two quantized tensors with its combined scale.
    return Accumulation(int_matmul(a.values, b.values), a.scale * b.scale)


__all__ = [
    "INT32_MAX",
    "MAX_BITS",
    "MIN_BITS",
    "Accumulation",
    "QComplexTensor",
    "QTensor",
    "QuantSpec",
    "check_bits",
    "compute_scale",
    "dequantize",
    "dequantize_complex",
    "fake_quant",
    "fake_quant_complex",
    "fake_quant_value",
    "int_matmul",
    "qdot",
    "qmax",
    "quantize",
    "quantize_complex",
    "round_half_away",
]
