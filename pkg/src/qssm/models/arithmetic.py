# Filename: arithmetic.py
# Author: Rich Lewis @RichLewis007
# Description: Arithmetic back ends for the quantized model. SimulatedArithmetic holds integer
#              codes in float tensors with straight-through gradients for training;
#              IntegerArithmetic holds them in int64 with int32 range analysis for inference.
#              Both convert accumulators back to real units with identical float expressions.

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import torch
from torch import Tensor

from qssm.errors import AccumulatorOverflowError, IntegerPathError, ShapeMismatchError

from .quant import INT32_MAX, compute_scale, fake_quant, fake_quant_value, qmax, round_half_away


@dataclass(frozen=True, slots=True)
class Coded:
    # Codes of a real tensor; scale None means the identity coding (full precision).

    codes: Tensor
    scale: Tensor | None = None

    def value(self) -> Tensor:
        if self.scale is None:
            return self.codes
        return self.codes / self.scale

    def select(self, index: Any) -> Coded:
        # Slice the codes while keeping the per-tensor scale.
        return Coded(self.codes[index], self.scale)


@dataclass(frozen=True, slots=True)
class CodedComplex:
    # Real and imaginary codes sharing one scale.

    re: Tensor
    im: Tensor
    scale: Tensor | None = None

    def value(self) -> Tensor:
        if self.scale is None:
            return torch.complex(self.re, self.im)
        return torch.complex(self.re / self.scale, self.im / self.scale)


def _scale_product(*scales: Tensor | None) -> Tensor | None:
    product: Tensor | None = None
    for scale in scales:
        if scale is None:
            continue
        product = scale if product is None else product * scale
    return product


class _RoundSTE(torch.autograd.Function):
    # Round to integer codes with an identity Jacobian.

    @staticmethod
    def forward(ctx: Any, scaled: Tensor, limit: int, grad_bits: int | None) -> Tensor:  # type: ignore[override]
        ctx.grad_bits = grad_bits
        return round_half_away(scaled).clamp(-limit, limit)

    @staticmethod
    def backward(ctx: Any, grad: Tensor) -> tuple[Tensor, None, None]:  # type: ignore[override]
        if ctx.grad_bits is not None:
            grad = fake_quant_value(grad, ctx.grad_bits)
        return grad, None, None


class _QGeluCodes(torch.autograd.Function):
    """Integer qGELU kernel on float-held codes.

    Forward is ``floor(v * clamp(v + shift, 0, ceiling) / divisor)``; backward
    is the derivative of the unfloored product, i.e. of the reference qGELU.
    """

    @staticmethod
    def forward(  # type: ignore[override]
        ctx: Any, codes: Tensor, shift: float, ceiling: float, divisor: float
    ) -> Tensor:
        gate = torch.clamp(codes + shift, 0.0, ceiling)
        ctx.save_for_backward(codes, gate)
        ctx.shift = shift
        ctx.ceiling = ceiling
        ctx.divisor = divisor
        return torch.floor(codes * gate / divisor)

    @staticmethod
    def backward(  # type: ignore[override]
        ctx: Any, grad: Tensor
    ) -> tuple[Tensor, None, None, None]:
        codes, gate = ctx.saved_tensors
        shifted = codes + ctx.shift
        linear = ((shifted > 0) & (shifted < ctx.ceiling)).to(codes.dtype)
        return grad * (gate + codes * linear) / ctx.divisor, None, None, None


class Arithmetic:
    """Shared structure of the two back ends.

    Subclasses decide how integer codes are held (float with STE, or int64)
    and how accumulators are produced. Every conversion back to real units
    happens here, so the two back ends agree bit for bit whenever every
    operand is quantized.
    """

    integer: bool = False

    def __init__(self, *, quantize_gradients: bool = False) -> None:
        self.quantize_gradients = quantize_gradients

    # Coding -----------------------------------------------------------

    def code(self, x: Tensor, bits: int | None) -> Coded:
        if bits is None:
            return Coded(self._plain(x))
        scale = compute_scale(x, bits)
        return Coded(self._round(x, scale, bits), scale)

    def code_complex(self, z: Tensor, bits: int | None) -> CodedComplex:
        if bits is None:
            return CodedComplex(self._plain(z.real), self._plain(z.imag))
        scale = compute_scale(torch.stack([z.real, z.imag]), bits)
        return CodedComplex(
            self._round(z.real, scale, bits), self._round(z.imag, scale, bits), scale
        )

    def fake_quant(self, x: Tensor, bits: int | None) -> Tensor:
        # Snap a real tensor to its grid; a no-op in full precision.
        if bits is None:
            return self._plain(x)
        grad_bits = bits if self.quantize_gradients else None
        return fake_quant(x, bits, grad_bits=grad_bits)

    # Products ---------------------------------------------------------

    def linear(self, x: Coded, weight: Coded) -> Tensor:
        # x (..., in) times weight (out, in) transposed.
        if x.codes.shape[-1] != weight.codes.shape[-1]:
            raise ShapeMismatchError(
                f"linear expects {weight.codes.shape[-1]} input features, got {x.codes.shape[-1]}"
            )
        acc = self._matmul(x.codes, weight.codes.transpose(-1, -2))
        return self._finish(acc, x.scale, weight.scale)

    def mul(self, a: Coded, b: Coded) -> Tensor:
        # Elementwise product with broadcasting.
        return self._finish(self._elementwise(a.codes, b.codes), a.scale, b.scale)

    def cmul(self, a: CodedComplex, x: CodedComplex) -> Tensor:
        # Elementwise complex product a * x.
        re = self._elementwise(a.re, x.re) - self._elementwise(a.im, x.im)
        im = self._elementwise(a.re, x.im) + self._elementwise(a.im, x.re)
        self._check_pair_bound(a.re, x.re, a.im, x.im)
        self._check_pair_bound(a.re, x.im, a.im, x.re)
        return torch.complex(self._finish(re, a.scale, x.scale), self._finish(im, a.scale, x.scale))

    def cmatvec(self, matrix: CodedComplex, u: Coded) -> Tensor:
        # Complex (P, H) matrix times real (..., H) vectors, giving complex (..., P).
        re = self.linear(u, Coded(matrix.re, matrix.scale))
        im = self.linear(u, Coded(matrix.im, matrix.scale))
        return torch.complex(re, im)

    def cmatvec_real(self, matrix: CodedComplex, x: CodedComplex) -> Tensor:
        # Real part of complex (H, P) matrix times complex (..., P) vectors.
        stacked_x = torch.cat([x.re, x.im], dim=-1)
        stacked_m = torch.cat([matrix.re, -matrix.im], dim=-1)
        acc = self._matmul(stacked_x, stacked_m.transpose(-1, -2))
        return self._finish(acc, x.scale, matrix.scale)

    def feature_sum(self, x: Coded) -> Tensor:
        # Sum over the last axis, in real units.
        return self._finish(self._reduce(x.codes), x.scale)

    def feature_sum_sq(self, x: Coded) -> Tensor:
        # Sum of squares over the last axis, in real units.
        return self._finish(self._reduce(self._elementwise(x.codes, x.codes)), x.scale, x.scale)

    def qgelu_codes(self, x: Coded, *, shift: float = 2.0, ceiling: float = 4.0) -> Tensor:
        """qGELU on coded input, returned in real units before requantization.

        With ``ceiling == 2**k`` the integer kernel is
        ``(v * clamp(v + round(shift * s), 0, round(ceiling * s))) >> k``
        and its output carries scale ``s**2``.
        """
        if x.scale is None:
            raise IntegerPathError("qgelu_codes needs quantized input")
        k = int(ceiling).bit_length() - 1
        code_shift = float(round_half_away(shift * x.scale))
        code_ceiling = float(round_half_away(ceiling * x.scale))
        out = self._qgelu_kernel(x.codes, code_shift, code_ceiling, k)
        return self._finish(out, x.scale, x.scale)

    # Back-end hooks ---------------------------------------------------

    def _plain(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def _round(self, x: Tensor, scale: Tensor, bits: int) -> Tensor:
        raise NotImplementedError

    def _matmul(self, a: Tensor, b: Tensor) -> Tensor:
        raise NotImplementedError

    def _elementwise(self, a: Tensor, b: Tensor) -> Tensor:
        raise NotImplementedError

    def _reduce(self, codes: Tensor) -> Tensor:
        raise NotImplementedError

    def _qgelu_kernel(self, codes: Tensor, shift: float, ceiling: float, k: int) -> Tensor:
        raise NotImplementedError

    def _check_pair_bound(self, a1: Tensor, b1: Tensor, a2: Tensor, b2: Tensor) -> None:
        return None

    def _finish(self, acc: Tensor, *scales: Tensor | None) -> Tensor:
        product = _scale_product(*scales)
        if product is None:
            return self._to_real(acc)
        real = self._to_real(acc, product.dtype)
        return real / product

    def _to_real(self, acc: Tensor, dtype: torch.dtype | None = None) -> Tensor:
        return acc


class SimulatedArithmetic(Arithmetic):
    # Float-held codes with straight-through rounding; used for training and FP inference.

    def _plain(self, x: Tensor) -> Tensor:
        return x

    def _round(self, x: Tensor, scale: Tensor, bits: int) -> Tensor:
        grad_bits = bits if self.quantize_gradients else None
        out: Tensor = _RoundSTE.apply(x * scale, qmax(bits), grad_bits)
        return out

    def _matmul(self, a: Tensor, b: Tensor) -> Tensor:
        return torch.matmul(a, b)

    def _elementwise(self, a: Tensor, b: Tensor) -> Tensor:
        return a * b

    def _reduce(self, codes: Tensor) -> Tensor:
        return codes.sum(dim=-1, keepdim=True)

    def _qgelu_kernel(self, codes: Tensor, shift: float, ceiling: float, k: int) -> Tensor:
        out: Tensor = _QGeluCodes.apply(codes, shift, ceiling, float(1 << k))
        return out


class IntegerArithmetic(Arithmetic):
    """Integer-only accumulation for inference.

    Codes are int64; every product and sum is bounded by range analysis
    against the int32 accumulator before it is formed. Full-precision
    operands are rejected.
    """

    integer = True

    def __init__(self, *, dtype: torch.dtype = torch.float32) -> None:
        super().__init__()
        self.dtype = dtype

    def _plain(self, x: Tensor) -> Tensor:
        raise IntegerPathError("integer inference requires every operand to be quantized")

    def _round(self, x: Tensor, scale: Tensor, bits: int) -> Tensor:
        limit = qmax(bits)
        return round_half_away(x.detach() * scale).clamp(-limit, limit).to(torch.int64)

    def _matmul(self, a: Tensor, b: Tensor) -> Tensor:
        bound = torch.matmul(a.abs(), b.abs())
        self._check(bound, "matrix product")
        return torch.matmul(a, b)

    def _elementwise(self, a: Tensor, b: Tensor) -> Tensor:
        product = a * b
        self._check(product.abs(), "elementwise product")
        return product

    def _reduce(self, codes: Tensor) -> Tensor:
        self._check(codes.abs().sum(dim=-1), "feature sum")
        return codes.sum(dim=-1, keepdim=True)

    def _qgelu_kernel(self, codes: Tensor, shift: float, ceiling: float, k: int) -> Tensor:
        gate = torch.clamp(codes + int(shift), 0, int(ceiling))
        product = codes * gate
        self._check(product.abs(), "qGELU product")
        return product >> k

    def _check_pair_bound(self, a1: Tensor, b1: Tensor, a2: Tensor, b2: Tensor) -> None:
        self._check(a1.abs() * b1.abs() + a2.abs() * b2.abs(), "complex product")

    def _to_real(self, acc: Tensor, dtype: torch.dtype | None = None) -> Tensor:
        return acc.to(dtype or self.dtype)

    @staticmethod
    def _check(bound: Tensor, what: str) -> None:
        if bound.numel() and int(bound.max()) > INT32_MAX:
            raise AccumulatorOverflowError(f"{what} may exceed the int32 accumulator")


__all__ = [
    "Arithmetic",
    "Coded",
    "CodedComplex",
    "IntegerArithmetic",
    "SimulatedArithmetic",
]
