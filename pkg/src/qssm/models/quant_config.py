# Filename: quant_config.py
# Author: Rich Lewis @RichLewis007
# Description: Quantization configuration names such as "W4A8SSM8". Parses and renders the
#              naming grammar and resolves the effective bit width of every model component.

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Final

from rapidfuzz import process

from qssm.errors import QuantConfigError

from .quant import MAX_BITS, MIN_BITS
from .ssm import SSMBits

GRAMMAR: Final[str] = "FP | [W<bits>][A<bits>][SSM<bits>][Abar<bits>][SSMA<bits>] (bits 1..16)"

_NAME_RE: Final = re.compile(
    r"^(?:W(?P<w>\d+))?(?:A(?P<a>\d+))?(?:SSM(?P<ssm>\d+))?"
    r"(?:Abar(?P<abar>\d+))?(?:SSMA(?P<ssma>\d+))?$"
)

# Configurations reported in the result tables.
TABLE_CONFIGS: Final[tuple[str, ...]] = (
    "FP",
    "W8A8",
    "W4A8SSM8",
    "W4A8Abar8",
    "W4A8",
    "W2A8SSM8",
    "W2A8Abar8",
    "W2A8",
    "W8A4SSMA8",
    "W8A4",
    "W8A2SSMA8",
    "W8A2",
)


@dataclass(frozen=True, slots=True)
class EffectiveBits:
    # Resolved bit widths used by the forward pass.

    weights: int | None = None
    activations: int | None = None
    ssm: SSMBits = field(default_factory=SSMBits)

    @property
    def fully_quantized(self) -> bool:
        return self.weights is not None and self.activations is not None and self.ssm.fully_quantized

    @property
    def any_quantized(self) -> bool:
        return (
            self.weights is not None
            or self.activations is not None
            or self.ssm.weights_quantized
            or self.ssm.state is not None
        )


@dataclass(frozen=True, slots=True)
class QuantConfig:
    """Per-component bit widths; None keeps a component in full precision.

    ``ssm_w_bits`` covers Abar, Bbar, C and D; ``abar_bits`` overrides it
    for Abar alone; ``ssm_a_bits`` overrides ``a_bits`` for the hidden
    state and outputs inside the SSM.
    """

    w_bits: int | None = None
    a_bits: int | None = None
    ssm_w_bits: int | None = None
    abar_bits: int | None = None
    ssm_a_bits: int | None = None

    def __post_init__(self) -> None:
        for bits in (self.w_bits, self.a_bits, self.ssm_w_bits, self.abar_bits, self.ssm_a_bits):
            if bits is not None and not MIN_BITS <= bits <= MAX_BITS:
                raise QuantConfigError(f"bit width {bits} outside {MIN_BITS}..{MAX_BITS}")

    @property
    def name(self) -> str:
        return render_name(self)

    @property
    def is_full_precision(self) -> bool:
        return not self.resolve().any_quantized

    def resolve(self) -> EffectiveBits:
        ssm_weights = self.ssm_w_bits if self.ssm_w_bits is not None else self.w_bits
        abar = self.abar_bits if self.abar_bits is not None else ssm_weights
        state = self.ssm_a_bits if self.ssm_a_bits is not None else self.a_bits
        return EffectiveBits(
            weights=self.w_bits,
            activations=self.a_bits,
            ssm=SSMBits(abar=abar, b=ssm_weights, c=ssm_weights, d=ssm_weights, state=state),
        )


FULL_PRECISION_CONFIG: Final = QuantConfig()


def _normalize(name: str) -> str:
    cleaned = name.strip().replace("Ā", "Abar").replace(" ", "")
    return "FP" if cleaned.upper() == "FP" else cleaned


def _suggest(name: str) -> str | None:
    match = process.extractOne(name, TABLE_CONFIGS, score_cutoff=60)
    return match[0] if match else None


def parse_quant_config(name: str) -> QuantConfig:
    # Parse a configuration name; "FP" means everything in full precision.
    cleaned = _normalize(name)
    if cleaned == "FP":
        return FULL_PRECISION_CONFIG
    match = _NAME_RE.match(cleaned) if cleaned else None
    if match is None:
        raise QuantConfigError(
            f"invalid quantization config {name!r}; expected {GRAMMAR}",
            suggestion=_suggest(cleaned),
        )
    groups = {key: int(value) if value is not None else None for key, value in match.groupdict().items()}
    return QuantConfig(
        w_bits=groups["w"],
        a_bits=groups["a"],
        ssm_w_bits=groups["ssm"],
        abar_bits=groups["abar"],
        ssm_a_bits=groups["ssma"],
    )


def render_name(cfg: QuantConfig) -> str:
    # Canonical name; parse_quant_config(render_name(cfg)) == cfg.
    parts = [
        f"{token}{bits}"
        for token, bits in (
            ("W", cfg.w_bits),
            ("A", cfg.a_bits),
            ("SSM", cfg.ssm_w_bits),
            ("Abar", cfg.abar_bits),
            ("SSMA", cfg.ssm_a_bits),
        )
        if bits is not None
    ]
    return "".join(parts) or "FP"


__all__ = [
    "FULL_PRECISION_CONFIG",
    "GRAMMAR",
    "TABLE_CONFIGS",
    "EffectiveBits",
    "QuantConfig",
    "parse_quant_config",
    "render_name",
]
