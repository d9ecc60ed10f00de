"""
Parameter checkpoint files.

Layout (all integers little-endian):

    offset 0   4 bytes   magic b"TWFM"
    offset 4   u32       format version (currently 1)
    offset 8   u32       header length N in bytes
    offset 12  N bytes   UTF-8 JSON header
    offset 12+N          float64 payload, little-endian, tensors back to back

The header holds the model config, the fitted scaler, free-form metadata and
a tensor index of {name, shape, offset, count} where offset and count are in
float64 elements from the start of the payload. See docs/checkpoint_format.md.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from pydantic import ValidationError

from .config import ModelConfig
from .data import MinMaxScaler
from .errors import CheckpointError
from .model import TwinFormerParams

logger = logging.getLogger(__name__)

MAGIC = b"TWFM"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sII")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: TwinFormerParams
    scaler: Optional[MinMaxScaler] = None
    metadata: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(
    path: Path,
    params: TwinFormerParams,
    cfg: ModelConfig,
    scaler: Optional[MinMaxScaler] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    index = []
    chunks = []
    offset = 0
    for name, tensor in params.named_parameters():
        index.append({"name": name, "shape": list(tensor.shape), "offset": offset, "count": tensor.size})
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
        offset += tensor.size
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": cfg.model_dump(mode="json"),
        "scaler": scaler.to_dict() if scaler is not None else None,
        "metadata": metadata or {},
        "tensors": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for chunk in chunks:
            fh.write(chunk)
    logger.info("Saved checkpoint with %d tensors (%d values) to %s", len(index), offset, path)
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _PREAMBLE.size:
        raise CheckpointError(f"checkpoint {path} is truncated")
    magic, version, header_len = _PREAMBLE.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"checkpoint {path} has a bad magic number {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint {path} has unsupported format version {version}")
    start = _PREAMBLE.size
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
        cfg = ModelConfig.model_validate(header["model_config"])
        index = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
        raise CheckpointError(f"checkpoint {path} has a corrupted header: {exc}") from exc

    body = blob[start + header_len :]
    if len(body) % 8:
        raise CheckpointError(f"checkpoint {path} payload is not a whole number of float64 values")
    payload = np.frombuffer(body, dtype="<f8")
    try:
        expected = sum(int(entry["count"]) for entry in index)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} has a corrupted tensor index: {exc}") from exc
    if payload.size != expected:
        raise CheckpointError(f"checkpoint {path} payload holds {payload.size} values, header declares {expected}")

    arrays = {}
    try:
        for entry in index:
            lo, count = int(entry["offset"]), int(entry["count"])
            if lo < 0 or lo + count > payload.size:
                raise ValueError(f"tensor {entry['name']!r} spans [{lo}, {lo + count}) outside the payload")
            arrays[entry["name"]] = payload[lo : lo + count].astype(np.float64).reshape(entry["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} has a corrupted tensor index: {exc}") from exc
    params = TwinFormerParams.from_named(cfg, arrays)

    try:
        scaler = MinMaxScaler.from_dict(header["scaler"]) if header.get("scaler") else None
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint {path} has a corrupted scaler: {exc}") from exc
    return Checkpoint(config=cfg, params=params, scaler=scaler, metadata=header.get("metadata", {}))
