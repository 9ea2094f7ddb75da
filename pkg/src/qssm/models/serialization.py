# Filename: serialization.py
# Author: Rich Lewis @RichLewis007
# Description: Little-endian binary model file. Layout: magic "QSSM", u32 version, u32 metadata
#              length, canonical JSON metadata, u32 array count, then per array a 4 x u32 shape
#              header, a u8 dtype tag and the payload; a trailing CRC32 covers every prior byte.

from __future__ import annotations

import json
import logging
import os
import struct
import zlib
from pathlib import Path
from typing import Any, Final

import numpy as np
import torch

from qssm.errors import ModelFormatError, QuantConfigError

from .network import ModelDims, OpsConfig, S5Model
from .quant import QComplexTensor, QTensor, check_bits, payload_dtype
from .quant_config import parse_quant_config

logger = logging.getLogger(__name__)

MAGIC: Final[bytes] = b"QSSM"
FORMAT_VERSION: Final[int] = 1
MAX_RANK: Final[int] = 4

_TAG_DTYPES: Final[dict[int, np.dtype[Any]]] = {
    0: np.dtype("<f4"),
    1: np.dtype("<i1"),
    2: np.dtype("<i2"),
}


def _dtype_tag(dtype: np.dtype[Any]) -> int:
    for tag, candidate in _TAG_DTYPES.items():
        if candidate == dtype:
            return tag
    raise ModelFormatError(f"unsupported array dtype {dtype}")


def _padded(shape: tuple[int, ...]) -> tuple[int, ...]:
    if len(shape) > MAX_RANK:
        raise ModelFormatError(f"array rank {len(shape)} exceeds {MAX_RANK}")
    return tuple(shape) + (1,) * (MAX_RANK - len(shape))


def _int_tag(bits: int) -> str:
    return "<i1" if payload_dtype(bits) == torch.int8 else "<i2"


def _payload_arrays(payload: QTensor | QComplexTensor) -> list[np.ndarray]:
    parts = [payload.re, payload.im] if isinstance(payload, QComplexTensor) else [payload]
    arrays = [part.values.cpu().numpy().astype(_int_tag(part.bits)) for part in parts]
    arrays.append(np.asarray([parts[0].scale], dtype="<f4"))
    return arrays


def _model_arrays(model: S5Model) -> list[np.ndarray]:
    arrays = [
        tensor.detach().cpu().numpy().astype("<f4") for tensor in model.state_dict().values()
    ]
    for payload in model.frozen.values():
        arrays.extend(_payload_arrays(payload))
    return arrays


def encode_model(model: S5Model) -> bytes:
    # Serialize a model to the canonical byte layout.
    metadata = json.dumps(model.metadata(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    arrays = _model_arrays(model)
    buf = bytearray(MAGIC)
    buf += struct.pack("<II", FORMAT_VERSION, len(metadata))
    buf += metadata
    buf += struct.pack("<I", len(arrays))
    for array in arrays:
        buf += struct.pack("<4I", *_padded(array.shape))
        buf += struct.pack("<B", _dtype_tag(array.dtype))
        buf += array.tobytes()
    buf += struct.pack("<I", zlib.crc32(buf))
    return bytes(buf)


class _Reader:
    # Bounds-checked cursor over the file body.

    def __init__(self, data: bytes, offset: int) -> None:
        self._data = data
        self._offset = offset

    def take(self, size: int) -> bytes:
        end = self._offset + size
        if size < 0 or end > len(self._data):
            raise ModelFormatError("model file is truncated")
        chunk = self._data[self._offset : end]
        self._offset = end
        return chunk

    def u32(self) -> int:
        value: int = struct.unpack("<I", self.take(4))[0]
        return value

    def array(self, expected_shape: tuple[int, ...], expected_dtype: str, name: str) -> np.ndarray:
        header = struct.unpack("<4I", self.take(16))
        if header != _padded(expected_shape):
            raise ModelFormatError(f"shape header {header} does not match {name} {expected_shape}")
        tag = self.take(1)[0]
        dtype = np.dtype(expected_dtype)
        if tag not in _TAG_DTYPES or _TAG_DTYPES[tag] != dtype:
            raise ModelFormatError(f"unexpected dtype tag {tag} for {name}")
        count = int(np.prod(expected_shape, dtype=np.int64))
        raw = self.take(count * dtype.itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(expected_shape).copy()

    @property
    def remaining(self) -> int:
        return len(self._data) - self._offset


def _model_from_metadata(meta: dict[str, Any]) -> S5Model:
    try:
        return S5Model(
            ModelDims(**meta["dims"]),
            task=meta["task"],
            seed=int(meta["seed"]),
            qcfg=parse_quant_config(meta["quant"]),
            readout=meta["readout"],
            scan=meta["scan"],
            ops=OpsConfig(**meta["ops"]),
            quantize_gradients=bool(meta["quantize_gradients"]),
        )
    except (KeyError, TypeError, ValueError, QuantConfigError) as exc:
        raise ModelFormatError(f"invalid model metadata: {exc}") from exc


def _frozen_entries(meta: dict[str, Any]) -> list[dict[str, Any]]:
    # Validated (name, kind, bits, shape) records of the frozen payloads.
    entries: list[dict[str, Any]] = []
    try:
        for entry in meta.get("frozen", []):
            kind = entry["kind"]
            if kind not in ("real", "complex"):
                raise ValueError(f"unknown payload kind {kind!r}")
            bits = int(entry["bits"])
            check_bits(bits)
            entries.append(
                {
                    "name": str(entry["name"]),
                    "kind": kind,
                    "bits": bits,
                    "shape": tuple(int(dim) for dim in entry["shape"]),
                }
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"invalid frozen payload metadata: {exc}") from exc
    return entries


def _read_payload(reader: _Reader, entry: dict[str, Any]) -> QTensor | QComplexTensor:
    name, bits, shape = entry["name"], entry["bits"], entry["shape"]
    tag = _int_tag(bits)
    parts = 2 if entry["kind"] == "complex" else 1
    values = [torch.from_numpy(reader.array(shape, tag, name)) for _ in range(parts)]
    scale = float(reader.array((1,), "<f4", f"{name} scale")[0])
    payloads = [QTensor(values=v, scale=scale, bits=bits) for v in values]
    if parts == 2:
        return QComplexTensor(re=payloads[0], im=payloads[1])
    return payloads[0]


def decode_model(data: bytes) -> S5Model:
    """Rebuild a model from its byte layout.

    Every structural problem raises ModelFormatError before any model is
    returned.
    """
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if len(data) < len(MAGIC) + 16:
        raise ModelFormatError("model file is truncated")
    body, (stored_crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != stored_crc:
        raise ModelFormatError("checksum mismatch")

    reader = _Reader(body, len(MAGIC))
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    try:
        meta = json.loads(reader.take(reader.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable metadata: {exc}") from exc
    count = reader.u32()

    model = _model_from_metadata(meta)
    frozen_entries = _frozen_entries(meta)
    template = model.state_dict()
    expected = len(template) + sum(
        (3 if entry["kind"] == "complex" else 2) for entry in frozen_entries
    )
    if count != expected:
        raise ModelFormatError(f"array count {count} does not match metadata ({expected})")

    state = {
        name: torch.from_numpy(reader.array(tuple(tensor.shape), "<f4", name))
        for name, tensor in template.items()
    }
    model.load_state_dict(state)
    model.frozen = {entry["name"]: _read_payload(reader, entry) for entry in frozen_entries}
    model.ptq_applied = bool(meta.get("ptq", False))
    if reader.remaining:
        raise ModelFormatError(f"{reader.remaining} unexpected trailing bytes")
    return model


def save_model(model: S5Model, path: Path) -> Path:
    # Write atomically: a temporary sibling is renamed over the target.
    data = encode_model(model)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    logger.info("Saved %s model (%d bytes) to %s", model.qcfg.name, len(data), path)
    return path


def load_model(path: Path) -> S5Model:
    model = decode_model(path.read_bytes())
    logger.info("Loaded %s model from %s", model.qcfg.name, path)
    return model


__all__ = [
    "FORMAT_VERSION",
    "MAGIC",
    "decode_model",
    "encode_model",
    "load_model",
    "save_model",
]
