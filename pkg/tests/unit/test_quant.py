"""Tests for the per-tensor quantization primitives."""

from __future__ import annotations

import pytest
import torch

from qssm.errors import AccumulatorOverflowError, QuantizationError
from qssm.models.quant import (
    QTensor,
    compute_scale,
    dequantize,
    dequantize_complex,
    fake_quant,
    fake_quant_value,
    int_matmul,
    qdot,
    qmax,
    quantize,
    quantize_complex,
    round_half_away,
)


def test_qmax_matches_symmetric_range() -> None:
    assert qmax(8) == 127
    assert qmax(4) == 7
    assert qmax(16) == 32767
    assert qmax(1) == 0


@pytest.mark.parametrize("bits", [0, 17, -3])
def test_out_of_range_bit_widths_are_rejected(bits: int) -> None:
    with pytest.raises(QuantizationError):
        quantize(torch.ones(3), bits)


def test_round_half_away_from_zero() -> None:
    x = torch.tensor([-2.5, -1.5, -0.5, 0.5, 1.5, 2.5, 0.49])
    assert round_half_away(x).tolist() == [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 0.0]


@pytest.mark.parametrize("bits", [2, 4, 8, 16])
def test_round_trip_error_is_at_most_half_a_step(bits: int) -> None:
    gen = torch.Generator().manual_seed(bits)
    for _ in range(250):
        x = torch.randn(33, generator=gen, dtype=torch.float64) * 10.0
        q = quantize(x, bits)
        err = (dequantize(q) - x).abs().max().item()
        assert err <= q.step / 2 * (1 + 1e-9)


def test_zero_maps_to_zero_and_signs_are_symmetric() -> None:
    gen = torch.Generator().manual_seed(0)
    x = torch.randn(64, generator=gen, dtype=torch.float64)
    x[5] = 0.0
    q = quantize(x, 8)
    neg = quantize(-x, 8)
    assert int(q.values[5]) == 0
    assert torch.equal(neg.values, -q.values)
    assert neg.scale == q.scale


def test_all_zero_tensor_gets_unit_scale() -> None:
    zeros = torch.zeros(4, 4)
    assert float(compute_scale(zeros, 8)) == 1.0
    assert torch.count_nonzero(quantize(zeros, 8).values) == 0
    assert torch.equal(fake_quant_value(zeros, 8), zeros)


def test_non_finite_input_is_rejected() -> None:
    with pytest.raises(QuantizationError):
        compute_scale(torch.tensor([1.0, float("nan")]), 8)
    with pytest.raises(QuantizationError):
        quantize(torch.tensor([float("inf")]), 4)


def test_largest_magnitude_maps_to_qmax() -> None:
    q = quantize(torch.tensor([-3.0, 0.3, 1.5]), 8)
    assert q.values.dtype == torch.int8
    assert int(q.values[0]) == -127
    assert quantize(torch.tensor([2.0]), 12).values.dtype == torch.int16


@pytest.mark.parametrize("bits", [2, 3, 4, 8, 12])
def test_fake_quant_is_idempotent(bits: int) -> None:
    gen = torch.Generator().manual_seed(bits)
    for _ in range(50):
        x = torch.randn(5, 7, generator=gen)
        once = fake_quant_value(x, bits)
        assert torch.equal(fake_quant_value(once, bits), once)


@pytest.mark.parametrize("dtype", [torch.float32, torch.float64])
@pytest.mark.parametrize("bits", [2, 4, 8, 16])
def test_fake_quant_equals_dequantized_quantize(bits: int, dtype: torch.dtype) -> None:
    gen = torch.Generator().manual_seed(bits)
    for _ in range(20):
        x = torch.randn(6, 9, generator=gen, dtype=dtype) * 3.0
        assert torch.equal(fake_quant_value(x, bits), dequantize(quantize(x, bits), dtype))


@pytest.mark.parametrize("bits", [3, 8])
def test_fake_quant_is_idempotent_in_double_precision(bits: int) -> None:
    gen = torch.Generator().manual_seed(100 + bits)
    for _ in range(50):
        once = fake_quant_value(torch.rand(33, generator=gen, dtype=torch.float64) * 7.0, bits)
        assert torch.equal(fake_quant_value(once, bits), once)


def test_one_bit_scale_is_zero() -> None:
    assert float(compute_scale(torch.tensor([0.5, -1.0]), 1)) == 0.0
    assert torch.count_nonzero(quantize(torch.tensor([0.5, -1.0]), 1).values) == 0


def test_one_bit_grid_has_no_nonzero_codes() -> None:
    out = fake_quant_value(torch.tensor([0.5, -1.0]), 1)
    assert bool(torch.isnan(out).all())


def test_fake_quant_passes_gradients_straight_through() -> None:
    x = torch.randn(10, dtype=torch.float64, requires_grad=True)
    fake_quant(x, 4).sum().backward()
    assert x.grad is not None
    assert torch.equal(x.grad, torch.ones_like(x))


def test_fake_quant_can_quantize_the_incoming_gradient() -> None:
    gen = torch.Generator().manual_seed(3)
    x = torch.randn(12, generator=gen, dtype=torch.float64, requires_grad=True)
    w = torch.randn(12, generator=gen, dtype=torch.float64)
    (fake_quant(x, 8, grad_bits=4) * w).sum().backward()
    assert x.grad is not None
    assert torch.equal(x.grad, fake_quant_value(w, 4))


def test_complex_parts_share_one_scale() -> None:
    z = torch.complex(torch.tensor([0.5, -0.25]), torch.tensor([2.0, 0.1]))
    q = quantize_complex(z, 8)
    assert q.re.scale == q.im.scale == pytest.approx(127 / 2.0)
    assert int(q.im.values[0]) == 127
    back = dequantize_complex(q)
    assert (back - z.to(torch.complex128)).abs().max().item() <= q.re.step


def test_qtensor_rejects_out_of_range_payloads() -> None:
    with pytest.raises(QuantizationError):
        QTensor(values=torch.tensor([8], dtype=torch.int8), scale=1.0, bits=4)
    with pytest.raises(QuantizationError):
        QTensor(values=torch.tensor([1.0]), scale=1.0, bits=4)


def test_int_matmul_is_exact_within_the_int32_bound() -> None:
    a = torch.tensor([[127, -127, 5]], dtype=torch.int8)
    b = torch.tensor([[1], [2], [3]], dtype=torch.int8)
    out = int_matmul(a, b)
    assert out.dtype == torch.int32
    assert out.tolist() == [[127 - 254 + 15]]
    single = torch.tensor([32767], dtype=torch.int16)
    assert int(int_matmul(single, single)) == 32767**2


def test_int_matmul_rejects_possible_overflow() -> None:
    codes = torch.full((3,), 32767, dtype=torch.int16)
    with pytest.raises(AccumulatorOverflowError):
        int_matmul(codes, codes)


def test_qdot_of_small_integer_vectors() -> None:
    a = QTensor(values=torch.tensor([1, 2], dtype=torch.int8), scale=1.0, bits=8)
    b = QTensor(values=torch.tensor([3, 4], dtype=torch.int8), scale=1.0, bits=8)
    acc = qdot(a, b)
    assert int(acc.accumulator) == 11
    assert acc.combined_scale == 1.0


def test_qdot_matches_the_dequantized_product_to_machine_precision() -> None:
    gen = torch.Generator().manual_seed(1)
    for _ in range(10):
        a = quantize(torch.randn(64, generator=gen, dtype=torch.float64), 8)
        b = quantize(torch.randn(64, generator=gen, dtype=torch.float64), 8)
        acc = qdot(a, b)

        exact = int((a.values.to(torch.int64) * b.values.to(torch.int64)).sum())
        assert int(acc.accumulator) == exact
        reference = torch.dot(dequantize(a), dequantize(b))
        assert torch.allclose(acc.dequantize(), reference, rtol=1e-12, atol=1e-12)
