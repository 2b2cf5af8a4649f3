"""Versioned binary checkpoint codec (layout in docs/checkpoint_format.md)."""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from models.enums import CheckpointKind
from models.recipes import ModelConfig
from numerics.params import ModelParams
from numerics.tensor import Tensor
from services.backbone.network import DiffusionTransformer
from utils.decorators import io_operation
from utils.exceptions import DataFormatException, FileOperationException
from utils.system.logger import logger

MAGIC = b"VSRCKPT\x00"
FORMAT_VERSION = 1
PARAM_PREFIX = "params/"
EMA_PREFIX = "ema/"

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    """Model weights plus EMA shadow and the run metadata needed to resume or sample."""

    kind: CheckpointKind
    config: ModelConfig
    params: ModelParams
    metadata: Dict[str, Any] = field(default_factory=dict)

    def model(self, use_ema: bool = False) -> DiffusionTransformer:
        params = self.params.ema_params() if use_ema else self.params
        return DiffusionTransformer(self.config, params)

    def header(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "kind": CheckpointKind(self.kind).value,
            "model": self.config.snapshot(),
            **self.metadata,
        }


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.blob):
            raise DataFormatException(
                f"checkpoint truncated while reading {what}", details={"offset": self.pos}
            )
        chunk = self.blob[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    header = json.dumps(checkpoint.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    entries: List[Tuple[str, np.ndarray]] = []
    for name, tensor in checkpoint.params.items():
        entries.append((PARAM_PREFIX + name, tensor.data))
    for name in checkpoint.params.names():
        entries.append((EMA_PREFIX + name, checkpoint.params.ema[name]))

    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)), header]
    parts.append(struct.pack("<I", len(entries)))
    for name, array in entries:
        data = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<"))
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", _DTYPE_CODES[data.dtype], data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    reader = _Reader(blob)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise DataFormatException("not a checkpoint file (bad magic)", details={"offset": 0})
    version, header_len = reader.unpack("<II", "version")
    if version != FORMAT_VERSION:
        raise DataFormatException(
            f"unsupported checkpoint version {version}", details={"offset": len(MAGIC)}
        )
    header_offset = reader.pos
    try:
        header = json.loads(reader.take(header_len, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatException(f"malformed checkpoint header: {e}", details={"offset": header_offset})

    (count,) = reader.unpack("<I", "tensor count")
    weights: Dict[str, np.ndarray] = {}
    ema: Dict[str, np.ndarray] = {}
    for _ in range(count):
        entry_offset = reader.pos
        (name_len,) = reader.unpack("<H", "name length")
        name = reader.take(name_len, "tensor name").decode("utf-8")
        code, ndim = reader.unpack("<BB", "tensor dtype")
        if code not in _CODE_DTYPES:
            raise DataFormatException(
                f"unknown dtype code {code} for {name}", details={"offset": entry_offset}
            )
        shape = reader.unpack(f"<{ndim}I", "tensor shape")
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        array = np.frombuffer(reader.take(nbytes, name), dtype=dtype).reshape(shape)
        array = array.astype(dtype.newbyteorder("="))
        if name.startswith(PARAM_PREFIX):
            weights[name[len(PARAM_PREFIX) :]] = array
        elif name.startswith(EMA_PREFIX):
            ema[name[len(EMA_PREFIX) :]] = array
        else:
            raise DataFormatException(f"unexpected tensor {name}", details={"offset": entry_offset})
    if reader.pos != len(blob):
        raise DataFormatException("trailing bytes after last tensor", details={"offset": reader.pos})
    if set(ema) != set(weights):
        raise DataFormatException("EMA shadow does not cover the weights", details={"offset": reader.pos})

    try:
        config = ModelConfig(**header.pop("model"))
        kind = CheckpointKind(header.pop("kind"))
    except (KeyError, ValueError) as e:
        raise DataFormatException(f"incomplete checkpoint header: {e}", details={"offset": header_offset})
    header.pop("format_version", None)
    tensors = {n: Tensor(a, name=n, dtype=a.dtype) for n, a in weights.items()}
    return Checkpoint(kind, config, ModelParams(tensors, ema=ema), metadata=header)


class CheckpointService:
    @staticmethod
    @io_operation()
    def save(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
        path = Path(path)
        blob = encode_checkpoint(checkpoint)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(path.suffix + ".tmp")
            tmp.write_bytes(blob)
            tmp.replace(path)
        except OSError as e:
            raise FileOperationException(f"cannot write checkpoint {path}: {e}")
        logger.info(
            "Checkpoint saved",
            extra={"path": path, "kind": CheckpointKind(checkpoint.kind).value, "bytes": len(blob)},
        )
        return path

    @staticmethod
    @io_operation()
    def load(path: Union[str, Path]) -> Checkpoint:
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as e:
            raise FileOperationException(f"cannot read checkpoint {path}: {e}")
        return decode_checkpoint(blob)
