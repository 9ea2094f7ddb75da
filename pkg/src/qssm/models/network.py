# Filename: network.py
# Author: Rich Lewis @RichLewis007
# Description: The quantized S5 network: a dense encoder, stacked pre-norm S5 blocks with
#              activation, multiplicative gate and residual, and a dense decoder. Also applies
#              post-training quantization and runs the integer-arithmetic inference path.

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Literal

import torch
import torch.nn.functional as F
from torch import Tensor, nn
from typing_extensions import override

from qssm.errors import IntegerPathError, ShapeMismatchError

from .arithmetic import Arithmetic, IntegerArithmetic, SimulatedArithmetic
from .qops import LAYER_NORM_EPS, hard_sigmoid, qgelu_activation, quant_layer_norm
from .quant import QComplexTensor, QTensor, fake_quant_value, quantize, quantize_complex
from .quant_config import FULL_PRECISION_CONFIG, EffectiveBits, QuantConfig
from .ssm import Readout, S5Layer, ScanMode, ssm_parameter_count

logger = logging.getLogger(__name__)

TaskKind = Literal["regression", "classification"]
Activation = Literal["auto", "gelu", "qgelu"]
Gate = Literal["auto", "sigmoid", "hard_sigmoid"]
Norm = Literal["auto", "layer_norm", "quant_layer_norm"]

_CHOICES: dict[str, tuple[str, ...]] = {
    "activation": ("auto", "gelu", "qgelu"),
    "gate": ("auto", "sigmoid", "hard_sigmoid"),
    "norm": ("auto", "layer_norm", "quant_layer_norm"),
}


@dataclass(frozen=True, slots=True)
class ModelDims:
    # Layer sizes; defaults give the 614-parameter Mackey-Glass model.

    input_dim: int = 10
    features: int = 4
    state_size: int = 12
    depth: int = 2
    output_dim: int = 10

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value < 1:
                raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True, slots=True)
class OpsConfig:
    """Operator choices inside each block.

    ``auto`` picks the float operator for full-precision configs and the
    quantization-friendly replacement otherwise.
    """

    activation: Activation = "auto"
    gate: Gate = "auto"
    norm: Norm = "auto"

    def __post_init__(self) -> None:
        for name, allowed in _CHOICES.items():
            value = getattr(self, name)
            if value not in allowed:
                raise ValueError(f"ops.{name} must be one of {allowed}, got {value!r}")

    def resolve(self, quantized: bool) -> OpsConfig:
        return OpsConfig(
            activation=self.activation if self.activation != "auto" else ("qgelu" if quantized else "gelu"),
            gate=self.gate if self.gate != "auto" else ("hard_sigmoid" if quantized else "sigmoid"),
            norm=self.norm if self.norm != "auto" else ("quant_layer_norm" if quantized else "layer_norm"),
        )


DEFAULT_DIMS = ModelDims()
DEFAULT_OPS = OpsConfig()


@dataclass(frozen=True, slots=True)
class MemoryReport:
    # Storage of the model before and after quantization.

    float32_bytes: int
    payload_bytes: int
    float_remainder_bytes: int

    @property
    def quantized_bytes(self) -> int:
        return self.payload_bytes + self.float_remainder_bytes

    @property
    def compression(self) -> float:
        return self.float32_bytes / self.quantized_bytes if self.quantized_bytes else 1.0


def _init_linear(layer: nn.Linear, gen: torch.Generator) -> None:
    # Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) from an explicit generator.
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.copy_((torch.rand(layer.weight.shape, generator=gen) * 2 - 1) * bound)
        layer.bias.copy_((torch.rand(layer.bias.shape, generator=gen) * 2 - 1) * bound)


def dense(x: Tensor, layer: nn.Linear, bits: EffectiveBits, arith: Arithmetic) -> Tensor:
    # Quantized dense layer; the bias is snapped to the weight grid and added in real units.
    y = arith.linear(arith.code(x, bits.activations), arith.code(layer.weight, bits.weights))
    return y + arith.fake_quant(layer.bias, bits.weights)


class S5Block(nn.Module):
    # Pre-norm residual block: norm, S5, activation, gate x * sigmoid(dense(x)), residual.

    def __init__(self, features: int, state_size: int, *, seed: int) -> None:
        super().__init__()
        self.norm_weight = nn.Parameter(torch.ones(features))
        self.norm_bias = nn.Parameter(torch.zeros(features))
        self.ssm = S5Layer(features, state_size, seed=seed)
        self.gate = nn.Linear(features, features)
        _init_linear(self.gate, torch.Generator().manual_seed(seed + 1))

    def _norm(self, x: Tensor, bits: EffectiveBits, ops: OpsConfig, arith: Arithmetic) -> Tensor:
        if ops.norm == "quant_layer_norm":
            return quant_layer_norm(
                x, self.norm_weight, self.norm_bias, bits.weights, bits.activations, arith=arith
            )
        weight = arith.fake_quant(self.norm_weight, bits.weights)
        bias = arith.fake_quant(self.norm_bias, bits.weights)
        out = F.layer_norm(x, (x.shape[-1],), weight, bias, eps=LAYER_NORM_EPS)
        return arith.fake_quant(out, bits.activations)

    def _activate(self, y: Tensor, bits: EffectiveBits, ops: OpsConfig, arith: Arithmetic) -> Tensor:
        if ops.activation == "qgelu":
            return qgelu_activation(y, bits.activations, arith)
        return arith.fake_quant(F.gelu(y), bits.activations)

    @override
    def forward(
        self,
        x: Tensor,
        bits: EffectiveBits,
        ops: OpsConfig,
        *,
        arith: Arithmetic,
        scan: ScanMode = "auto",
        readout: Readout = "current",
    ) -> Tensor:
        z = self._norm(x, bits, ops, arith)
        y = self.ssm(z, bits.ssm, arith=arith, scan=scan, readout=readout)
        y = self._activate(y, bits, ops, arith)
        logits = dense(y, self.gate, bits, arith)
        g = hard_sigmoid(logits) if ops.gate == "hard_sigmoid" else torch.sigmoid(logits)
        gated = arith.mul(arith.code(y, bits.activations), arith.code(g, bits.activations))
        return x + gated


class S5Model(nn.Module):
    """Encoder, stacked S5 blocks and decoder with a quantization configuration.

    Regression tasks decode every step; classification tasks mean-pool over
    time first and return one step. After :func:`apply_ptq` the integer
    payloads of the quantized weights live in ``frozen``.
    """

    def __init__(
        self,
        dims: ModelDims = DEFAULT_DIMS,
        *,
        task: TaskKind = "regression",
        seed: int = 0,
        qcfg: QuantConfig = FULL_PRECISION_CONFIG,
        readout: Readout = "current",
        scan: ScanMode = "auto",
        ops: OpsConfig = DEFAULT_OPS,
        quantize_gradients: bool = False,
    ) -> None:
        super().__init__()
        if task not in ("regression", "classification"):
            raise ValueError(f"unknown task kind {task!r}")
        self.dims = dims
        self.task: TaskKind = task
        self.seed = seed
        self.qcfg = qcfg
        self.readout: Readout = readout
        self.scan: ScanMode = scan
        self.ops = ops
        self.quantize_gradients = quantize_gradients
        self.ptq_applied = False
        self.frozen: dict[str, QTensor | QComplexTensor] = {}

        gen = torch.Generator().manual_seed(seed)
        block_seeds = torch.randint(0, 2**31 - 2, (dims.depth,), generator=gen).tolist()
        self.encoder = nn.Linear(dims.input_dim, dims.features)
        self.blocks = nn.ModuleList(
            S5Block(dims.features, dims.state_size, seed=int(block_seed)) for block_seed in block_seeds
        )
        self.decoder = nn.Linear(dims.features, dims.output_dim)
        _init_linear(self.encoder, gen)
        _init_linear(self.decoder, gen)

    def effective_bits(self) -> EffectiveBits:
        return self.qcfg.resolve()

    def resolved_ops(self, bits: EffectiveBits | None = None) -> OpsConfig:
        bits = bits or self.effective_bits()
        return self.ops.resolve(bits.any_quantized)

    @override
    def forward(
        self,
        batch: Tensor,
        *,
        bits: EffectiveBits | None = None,
        arith: Arithmetic | None = None,
    ) -> Tensor:
        if batch.dim() != 3 or batch.shape[-1] != self.dims.input_dim:
            raise ShapeMismatchError(
                f"expected batch (B, L, {self.dims.input_dim}), got {tuple(batch.shape)}"
            )
        bits = bits or self.effective_bits()
        arith = arith or SimulatedArithmetic(quantize_gradients=self.quantize_gradients)
        ops = self.resolved_ops(bits)
        x = dense(batch, self.encoder, bits, arith)
        for block in self.blocks:
            x = block(x, bits, ops, arith=arith, scan=self.scan, readout=self.readout)
        if self.task == "classification":
            x = x.mean(dim=-2, keepdim=True)
        return dense(x, self.decoder, bits, arith)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def quantized_weights(self, bits: EffectiveBits) -> list[tuple[str, nn.Parameter, int | None, bool]]:
        # (name, parameter, bits, stored-as-complex) for every statically quantizable weight.
        groups: list[tuple[str, nn.Parameter, int | None, bool]] = [
            ("encoder.weight", self.encoder.weight, bits.weights, False),
            ("encoder.bias", self.encoder.bias, bits.weights, False),
        ]
        for i, block in enumerate(self.blocks):
            assert isinstance(block, S5Block)
            prefix = f"blocks.{i}"
            groups += [
                (f"{prefix}.norm_weight", block.norm_weight, bits.weights, False),
                (f"{prefix}.norm_bias", block.norm_bias, bits.weights, False),
                (f"{prefix}.ssm.C", block.ssm.C, bits.ssm.c, True),
                (f"{prefix}.ssm.D", block.ssm.D, bits.ssm.d, False),
                (f"{prefix}.gate.weight", block.gate.weight, bits.weights, False),
                (f"{prefix}.gate.bias", block.gate.bias, bits.weights, False),
            ]
        groups += [
            ("decoder.weight", self.decoder.weight, bits.weights, False),
            ("decoder.bias", self.decoder.bias, bits.weights, False),
        ]
        return groups

    def metadata(self) -> dict[str, Any]:
        return {
            "dims": asdict(self.dims),
            "frozen": [
                {
                    "bits": payload.bits,
                    "kind": "complex" if isinstance(payload, QComplexTensor) else "real",
                    "name": name,
                    "shape": list(
                        (payload.re.values if isinstance(payload, QComplexTensor) else payload.values).shape
                    ),
                }
                for name, payload in self.frozen.items()
            ],
            "ops": asdict(self.ops),
            "ptq": self.ptq_applied,
            "quant": self.qcfg.name,
            "quantize_gradients": self.quantize_gradients,
            "readout": self.readout,
            "scan": self.scan,
            "seed": self.seed,
            "task": self.task,
        }


def parameter_count(dims: ModelDims) -> int:
    # Closed-form count of trainable parameters.
    h = dims.features
    per_block = 2 * h + ssm_parameter_count(h, dims.state_size) + h * h + h
    encoder = dims.input_dim * h + h
    decoder = h * dims.output_dim + dims.output_dim
    return encoder + dims.depth * per_block + decoder


def apply_ptq(model: S5Model, qcfg: QuantConfig) -> S5Model:
    """Quantize a full-precision model without retraining.

    Returns a copy whose weights are snapped to their grids once and whose
    ``frozen`` dict holds the integer payloads, including the discretized
    Abar and Bbar. Activations stay dynamically quantized at inference.
    """
    if not model.qcfg.is_full_precision:
        raise ValueError(f"PTQ expects a full-precision model, got {model.qcfg.name}")
    quantized = copy.deepcopy(model)
    if qcfg.is_full_precision:
        return quantized

    quantized.qcfg = qcfg
    bits = qcfg.resolve()
    frozen: dict[str, QTensor | QComplexTensor] = {}
    with torch.no_grad():
        for name, param, wbits, is_complex in quantized.quantized_weights(bits):
            if wbits is None:
                continue
            param.copy_(fake_quant_value(param, wbits))
            if is_complex:
                frozen[name] = quantize_complex(torch.complex(param[..., 0], param[..., 1]), wbits)
            else:
                frozen[name] = quantize(param, wbits)
        for i, block in enumerate(quantized.blocks):
            assert isinstance(block, S5Block)
            system = block.ssm.discretize()
            if bits.ssm.abar is not None:
                frozen[f"blocks.{i}.ssm.Abar"] = quantize_complex(system.Abar, bits.ssm.abar)
            if bits.ssm.b is not None:
                frozen[f"blocks.{i}.ssm.Bbar"] = quantize_complex(system.Bbar, bits.ssm.b)
    quantized.frozen = frozen
    quantized.ptq_applied = True
    report = memory_report(quantized)
    logger.info(
        "PTQ %s: %d payloads, %d -> %d bytes",
        qcfg.name,
        len(frozen),
        report.float32_bytes,
        report.quantized_bytes,
    )
    return quantized


def memory_report(model: S5Model) -> MemoryReport:
    # Float32 storage versus integer payloads plus the parameters left in float.
    sizes = {name: param.numel() for name, param in model.named_parameters()}
    covered = {name for name in model.frozen if name in sizes}
    for i in range(model.dims.depth):
        prefix = f"blocks.{i}.ssm"
        # Abar and Bbar together replace the continuous-time parameters.
        if f"{prefix}.Abar" in model.frozen and f"{prefix}.Bbar" in model.frozen:
            covered.update(f"{prefix}.{leaf}" for leaf in ("Lambda_re", "Lambda_im", "log_delta", "B"))
    payload = sum(q.nbytes + 4 for q in model.frozen.values())
    remainder = sum(size for name, size in sizes.items() if name not in covered)
    return MemoryReport(
        float32_bytes=4 * sum(sizes.values()),
        payload_bytes=payload,
        float_remainder_bytes=4 * remainder,
    )


def integer_forward(model: S5Model, batch: Tensor) -> Tensor:
    # Inference with integer codes and int32-checked accumulation throughout.
    bits = model.effective_bits()
    if not bits.fully_quantized:
        raise IntegerPathError(
            f"integer inference needs every component quantized; {model.qcfg.name} is not"
        )
    with torch.no_grad():
        out: Tensor = model(batch, arith=IntegerArithmetic(dtype=batch.dtype))
    return out


__all__ = [
    "MemoryReport",
    "ModelDims",
    "OpsConfig",
    "S5Block",
    "S5Model",
    "TaskKind",
    "apply_ptq",
    "dense",
    "integer_forward",
    "memory_report",
    "parameter_count",
]
