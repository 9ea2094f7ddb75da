"""Tests for the binary model file format."""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import pytest
import torch

from qssm.errors import ModelFormatError
from qssm.models.network import ModelDims, S5Model, apply_ptq
from qssm.models.quant import QComplexTensor
from qssm.models.quant_config import parse_quant_config
from qssm.models.serialization import decode_model, encode_model, load_model, save_model

GOLDEN = Path(__file__).resolve().parents[1] / "data" / "golden-fp.qssm"

# Parameter values stored in the golden file, in state_dict order.
GOLDEN_VALUES: dict[str, list[float]] = {
    "encoder.weight": [0.5],
    "encoder.bias": [0.25],
    "blocks.0.norm_weight": [1.0],
    "blocks.0.norm_bias": [0.0],
    "blocks.0.ssm.Lambda_re": [-0.5],
    "blocks.0.ssm.Lambda_im": [0.0],
    "blocks.0.ssm.B": [0.5, -0.5],
    "blocks.0.ssm.C": [1.0, 0.25],
    "blocks.0.ssm.D": [1.0],
    "blocks.0.ssm.log_delta": [-0.5],
    "blocks.0.gate.weight": [0.5],
    "blocks.0.gate.bias": [0.0],
    "decoder.weight": [1.0],
    "decoder.bias": [-0.5],
}


def _golden_model() -> S5Model:
    model = S5Model(ModelDims(1, 1, 1, 1, 1))
    template = model.state_dict()
    assert list(template) == list(GOLDEN_VALUES)
    model.load_state_dict(
        {name: torch.tensor(values).reshape(template[name].shape) for name, values in GOLDEN_VALUES.items()}
    )
    return model


def _with_crc(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body))


def test_encoding_matches_the_golden_file() -> None:
    assert encode_model(_golden_model()) == GOLDEN.read_bytes()


def test_golden_file_decodes_to_known_values() -> None:
    model = decode_model(GOLDEN.read_bytes())
    assert model.dims == ModelDims(1, 1, 1, 1, 1)
    assert model.qcfg.name == "FP"
    assert not model.ptq_applied
    for name, tensor in model.state_dict().items():
        assert tensor.flatten().tolist() == GOLDEN_VALUES[name]


def test_reencoding_is_byte_identical() -> None:
    for model in (S5Model(seed=5), apply_ptq(S5Model(seed=5), parse_quant_config("W4A8SSM8"))):
        data = encode_model(model)
        assert encode_model(decode_model(data)) == data


def test_ptq_payloads_survive_a_round_trip() -> None:
    model = apply_ptq(S5Model(seed=1), parse_quant_config("W8A8"))
    restored = decode_model(encode_model(model))
    assert restored.ptq_applied
    assert restored.qcfg == model.qcfg
    assert list(restored.frozen) == list(model.frozen)
    abar = restored.frozen["blocks.0.ssm.Abar"]
    original = model.frozen["blocks.0.ssm.Abar"]
    assert isinstance(abar, QComplexTensor) and isinstance(original, QComplexTensor)
    assert torch.equal(abar.re.values, original.re.values)
    assert abar.shared_scale == pytest.approx(original.shared_scale, rel=1e-6)
    x = torch.randn(2, 6, 10, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        assert torch.equal(restored(x), model(x))


def test_bad_magic_is_rejected() -> None:
    data = bytearray(GOLDEN.read_bytes())
    data[0:4] = b"XSSM"
    with pytest.raises(ModelFormatError, match="magic"):
        decode_model(bytes(data))


def test_flipped_byte_fails_the_checksum() -> None:
    data = bytearray(GOLDEN.read_bytes())
    data[300] ^= 0x01
    with pytest.raises(ModelFormatError, match="checksum"):
        decode_model(bytes(data))


@pytest.mark.parametrize("keep", [0, 3, 10, 100, 581])
def test_truncated_files_are_rejected(keep: int) -> None:
    with pytest.raises(ModelFormatError):
        decode_model(GOLDEN.read_bytes()[:keep])


def test_unknown_version_is_rejected() -> None:
    body = bytearray(GOLDEN.read_bytes()[:-4])
    body[4:8] = struct.pack("<I", 2)
    with pytest.raises(ModelFormatError, match="version 2"):
        decode_model(_with_crc(bytes(body)))


def test_array_count_must_match_metadata() -> None:
    body = bytearray(GOLDEN.read_bytes()[:-4])
    offset = 12 + struct.unpack("<I", bytes(body[8:12]))[0]
    body[offset : offset + 4] = struct.pack("<I", 13)
    with pytest.raises(ModelFormatError, match="array count"):
        decode_model(_with_crc(bytes(body)))


def test_trailing_bytes_are_rejected() -> None:
    body = GOLDEN.read_bytes()[:-4] + b"\x00"
    with pytest.raises(ModelFormatError):
        decode_model(_with_crc(body))


def _with_frozen_metadata(frozen: object) -> bytes:
    body = GOLDEN.read_bytes()[:-4]
    (size,) = struct.unpack("<I", body[8:12])
    meta = json.loads(body[12 : 12 + size])
    meta["frozen"] = frozen
    encoded = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _with_crc(body[:8] + struct.pack("<I", len(encoded)) + encoded + body[12 + size :])


@pytest.mark.parametrize(
    "frozen",
    [
        [{"name": "blocks.0.ssm.Abar", "bits": 8, "shape": [12]}],
        [{"name": "blocks.0.ssm.Abar", "kind": "quaternion", "bits": 8, "shape": [12]}],
        [{"name": "blocks.0.ssm.Abar", "kind": "real", "bits": 0, "shape": [12]}],
        [{"name": "blocks.0.ssm.Abar", "kind": "real", "bits": 8}],
        ["blocks.0.ssm.Abar"],
        7,
    ],
)
def test_malformed_payload_metadata_is_a_format_error(frozen: object) -> None:
    with pytest.raises(ModelFormatError, match="frozen payload metadata"):
        decode_model(_with_frozen_metadata(frozen))


def test_format_errors_are_os_errors() -> None:
    with pytest.raises(OSError):
        decode_model(b"QSSM")


def test_save_and_load(tmp_path: Path) -> None:
    model = S5Model(seed=9)
    path = save_model(model, tmp_path / "nested" / "model.qssm")
    assert path.exists()
    assert not (tmp_path / "nested" / "model.qssm.tmp").exists()
    restored = load_model(path)
    assert all(torch.equal(restored.state_dict()[k], v) for k, v in model.state_dict().items())
