# Filename: ssm.py
# Author: Rich Lewis @RichLewis007
# Description: S5 recurrence core. Parameters and initialization, zero-order-hold discretization,
#              the sequential scan (with per-step state quantization) and the log-depth parallel
#              scan, plus the S5Layer module that owns the trainable parameters.

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import torch
from torch import Tensor, nn

from qssm.errors import ParallelScanError, ShapeMismatchError, SingularDiscretizationError

from .arithmetic import Arithmetic, CodedComplex, SimulatedArithmetic

Readout = Literal["current", "previous"]
ScanMode = Literal["auto", "sequential", "parallel"]

DELTA_MIN = 0.001
DELTA_MAX = 0.1


@dataclass(frozen=True, slots=True)
class S5Params:
    # Continuous-time S5 parameters of one layer.

    Lambda: Tensor  # complex (P,)
    B: Tensor  # complex (P, H)
    C: Tensor  # complex (H, P)
    D: Tensor  # real (H,)
    log_delta: Tensor  # real (P,)

    @property
    def state_size(self) -> int:
        return int(self.Lambda.shape[0])

    @property
    def features(self) -> int:
        return int(self.D.shape[0])

    @property
    def delta(self) -> Tensor:
        return torch.exp(self.log_delta)


@dataclass(frozen=True, slots=True)
class DiscreteS5:
    # Discretized system: x_k = Abar * x_{k-1} + Bbar u_k, y_k = Re(C x_k) + D * u_k.

    Abar: Tensor
    Bbar: Tensor
    C: Tensor
    D: Tensor


@dataclass(frozen=True, slots=True)
class SSMBits:
    # Bit widths inside one SSM; None keeps that component in full precision.

    abar: int | None = None
    b: int | None = None
    c: int | None = None
    d: int | None = None
    state: int | None = None

    @property
    def weights_quantized(self) -> bool:
        return any(bits is not None for bits in (self.abar, self.b, self.c, self.d))

    @property
    def fully_quantized(self) -> bool:
        return None not in (self.abar, self.b, self.c, self.d, self.state)


FULL_PRECISION = SSMBits()


def init_s5(P: int, H: int, seed: int, *, dtype: torch.dtype = torch.float32) -> S5Params:
    """Draw a stable S5 initialization from ``seed``.

    Eigenvalues sit at ``-0.5 + i*pi*n/P``. B and C components are Gaussian
    with variances 1/(2H) and 2/P (C carries the factor 2 of the conjugate
    pair), D is standard normal and the timescales are log-uniform in
    [0.001, 0.1].
    """
    if P < 1 or H < 1:
        raise ValueError(f"state size and features must be positive, got P={P}, H={H}")
    gen = torch.Generator().manual_seed(seed)
    lambda_re = torch.full((P,), -0.5, dtype=dtype)
    lambda_im = math.pi * torch.arange(P, dtype=dtype) / P
    # Complex components: B has variance 1/H split over its two parts, C has
    # variance 4/P with the conjugate-pair factor 2 folded in. Neither is the
    # plain 1/sqrt(H), 1/sqrt(P) standard deviation of a real init.
    b_std = math.sqrt(1.0 / (2 * H))
    c_std = math.sqrt(2.0 / P)
    B = torch.randn(P, H, 2, generator=gen, dtype=dtype) * b_std
    C = torch.randn(H, P, 2, generator=gen, dtype=dtype) * c_std
    D = torch.randn(H, generator=gen, dtype=dtype)
    lo, hi = math.log(DELTA_MIN), math.log(DELTA_MAX)
    log_delta = lo + torch.rand(P, generator=gen, dtype=dtype) * (hi - lo)
    return S5Params(
        Lambda=torch.complex(lambda_re, lambda_im),
        B=torch.complex(B[..., 0], B[..., 1]),
        C=torch.complex(C[..., 0], C[..., 1]),
        D=D,
        log_delta=log_delta,
    )


def discretize_zoh(p: S5Params) -> DiscreteS5:
    # Zero-order hold: Abar = exp(Lambda * Delta), Bbar = (Abar - 1) / Lambda * B.
    if bool((p.Lambda == 0).any()):
        raise SingularDiscretizationError("zero-order hold is undefined for a zero eigenvalue")
    abar = torch.exp(p.Lambda * p.delta)
    bbar = ((abar - 1.0) / p.Lambda)[:, None] * p.B
    return DiscreteS5(Abar=abar, Bbar=bbar, C=p.C, D=p.D)


def _check_shapes(d: DiscreteS5, u: Tensor, x0: Tensor | None) -> None:
    P, H = d.Bbar.shape
    if d.Abar.shape != (P,) or d.C.shape != (H, P) or d.D.shape != (H,):
        raise ShapeMismatchError(
            f"inconsistent system: Abar {tuple(d.Abar.shape)}, Bbar {tuple(d.Bbar.shape)}, "
            f"C {tuple(d.C.shape)}, D {tuple(d.D.shape)}"
        )
    if u.dim() < 2 or u.shape[-1] != H or u.shape[-2] < 1:
        raise ShapeMismatchError(f"expected input (..., L >= 1, {H}), got {tuple(u.shape)}")
    if x0 is not None and x0.shape[-1] != P:
        raise ShapeMismatchError(f"initial state must end in {P}, got {tuple(x0.shape)}")


def _initial_state(d: DiscreteS5, u: Tensor, x0: Tensor | None) -> Tensor:
    batch = u.shape[:-2]
    P = d.Abar.shape[0]
    if x0 is None:
        zeros = torch.zeros(*batch, P, dtype=u.dtype, device=u.device)
        return torch.complex(zeros, zeros)
    return x0.expand(*batch, P)


def _code_system(
    d: DiscreteS5, bits: SSMBits, arith: Arithmetic
) -> tuple[CodedComplex, CodedComplex, CodedComplex, Tensor]:
    abar = arith.code_complex(d.Abar, bits.abar)
    bbar = arith.code_complex(d.Bbar, bits.b)
    c = arith.code_complex(d.C, bits.c)
    return abar, bbar, c, d.D


def s5_scan_sequential(
    d: DiscreteS5,
    u: Tensor,
    x0: Tensor | None = None,
    bits: SSMBits = FULL_PRECISION,
    *,
    arith: Arithmetic | None = None,
    readout: Readout = "current",
) -> tuple[Tensor, Tensor]:
    """Run the recurrence one step at a time.

    The system matrices are quantized once at their configured widths; the
    hidden state and the output are requantized at ``bits.state`` after
    every step. Returns the output sequence and the final state.
    """
    arith = arith or SimulatedArithmetic()
    _check_shapes(d, u, x0)
    abar, bbar, c, d_vec = _code_system(d, bits, arith)
    u_coded = arith.code(u, bits.state)
    bu = arith.cmatvec(bbar, u_coded)
    feedthrough = arith.mul(arith.code(d_vec, bits.d), u_coded)

    state = arith.code_complex(_initial_state(d, u, x0), bits.state)
    outputs: list[Tensor] = []
    for k in range(u.shape[-2]):
        next_state = arith.code_complex(arith.cmul(abar, state) + bu[..., k, :], bits.state)
        read = state if readout == "previous" else next_state
        y_k = arith.cmatvec_real(c, read) + feedthrough[..., k, :]
        outputs.append(arith.fake_quant(y_k, bits.state))
        state = next_state
    return torch.stack(outputs, dim=-2), state.value()


def _pairwise_scan(a: Tensor, b: Tensor) -> Tensor:
    # Combine neighbours, scan the half-length sequence, then fill in the even positions.
    length = b.shape[-2]
    if length == 1:
        return b
    if length % 2:
        a = torch.cat([a, torch.ones_like(a[..., :1, :])], dim=-2)
        b = torch.cat([b, torch.zeros_like(b[..., :1, :])], dim=-2)
    a_even, a_odd = a[..., 0::2, :], a[..., 1::2, :]
    b_even, b_odd = b[..., 0::2, :], b[..., 1::2, :]
    odd = _pairwise_scan(a_odd * a_even, a_odd * b_even + b_odd)
    even = torch.cat(
        [b_even[..., :1, :], a_even[..., 1:, :] * odd[..., :-1, :] + b_even[..., 1:, :]], dim=-2
    )
    return torch.stack([even, odd], dim=-2).flatten(-3, -2)[..., :length, :]


def associative_scan(abar: Tensor, bu: Tensor, x0: Tensor | None = None) -> Tensor:
    """Inclusive scan of ``x_k = abar_k * x_{k-1} + bu_k`` over axis -2.

    Pairs combine as ``(a_i, b_i) . (a_j, b_j) = (a_j a_i, a_j b_i + b_j)``.
    Each level combines adjacent pairs and recurses on half the length
    (the up-sweep), then recovers the remaining positions from the scanned
    half (the down-sweep): O(L) combines in O(log L) levels. Odd lengths are
    padded with the identity ``(1, 0)``.
    """
    a = abar.expand_as(bu)
    b = bu
    if x0 is not None:
        first = a[..., :1, :] * x0.unsqueeze(-2) + b[..., :1, :]
        b = torch.cat([first, b[..., 1:, :]], dim=-2)
    return _pairwise_scan(a, b)


def s5_scan_parallel(
    d: DiscreteS5,
    u: Tensor,
    x0: Tensor | None = None,
    bits: SSMBits = FULL_PRECISION,
    *,
    arith: Arithmetic | None = None,
    readout: Readout = "current",
) -> tuple[Tensor, Tensor]:
    # Log-depth scan; matches s5_scan_sequential whenever the state is not requantized.
    if bits.state is not None:
        raise ParallelScanError(
            "per-step state quantization is not associative; use the sequential scan"
        )
    arith = arith or SimulatedArithmetic()
    _check_shapes(d, u, x0)
    abar, bbar, c, d_vec = _code_system(d, bits, arith)
    u_coded = arith.code(u, None)
    bu = arith.cmatvec(bbar, u_coded)
    states = associative_scan(abar.value(), bu, x0)
    if readout == "previous":
        first = _initial_state(d, u, x0).unsqueeze(-2)
        read = torch.cat([first, states[..., :-1, :]], dim=-2)
    else:
        read = states
    y = arith.cmatvec_real(c, CodedComplex(read.real, read.imag))
    y = y + arith.mul(arith.code(d_vec, bits.d), u_coded)
    return y, states[..., -1, :]


class S5Layer(nn.Module):
    """Trainable S5 layer.

    Complex parameters are stored as real tensors (a trailing axis of size 2
    for B and C) and recombined on every forward pass.
    """

    def __init__(self, features: int, state_size: int, *, seed: int = 0) -> None:
        super().__init__()
        init = init_s5(state_size, features, seed)
        self.Lambda_re = nn.Parameter(init.Lambda.real.clone())
        self.Lambda_im = nn.Parameter(init.Lambda.imag.clone())
        self.B = nn.Parameter(torch.stack([init.B.real, init.B.imag], dim=-1))
        self.C = nn.Parameter(torch.stack([init.C.real, init.C.imag], dim=-1))
        self.D = nn.Parameter(init.D.clone())
        self.log_delta = nn.Parameter(init.log_delta.clone())

    @property
    def features(self) -> int:
        return int(self.D.shape[0])

    @property
    def state_size(self) -> int:
        return int(self.Lambda_re.shape[0])

    def params(self) -> S5Params:
        return S5Params(
            Lambda=torch.complex(self.Lambda_re, self.Lambda_im),
            B=torch.complex(self.B[..., 0], self.B[..., 1]),
            C=torch.complex(self.C[..., 0], self.C[..., 1]),
            D=self.D,
            log_delta=self.log_delta,
        )

    def discretize(self) -> DiscreteS5:
        return discretize_zoh(self.params())

    def forward(
        self,
        u: Tensor,
        bits: SSMBits = FULL_PRECISION,
        *,
        arith: Arithmetic | None = None,
        scan: ScanMode = "auto",
        readout: Readout = "current",
    ) -> Tensor:
        system = self.discretize()
        use_parallel = scan == "parallel" or (scan == "auto" and bits.state is None)
        if use_parallel:
            y, _ = s5_scan_parallel(system, u, bits=bits, arith=arith, readout=readout)
        else:
            y, _ = s5_scan_sequential(system, u, bits=bits, arith=arith, readout=readout)
        return y

    def extra_repr(self) -> str:
        return f"features={self.features}, state_size={self.state_size}"


def ssm_parameter_count(features: int, state_size: int) -> int:
    # Lambda (2P) + B (2PH) + C (2HP) + D (H) + log_delta (P).
    return 3 * state_size + 4 * state_size * features + features


__all__ = [
    "FULL_PRECISION",
    "DiscreteS5",
    "Readout",
    "S5Layer",
    "S5Params",
    "SSMBits",
    "ScanMode",
    "associative_scan",
    "discretize_zoh",
    "init_s5",
    "s5_scan_parallel",
    "s5_scan_sequential",
    "ssm_parameter_count",
]
