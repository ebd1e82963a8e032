"""Binary checkpoint format.

Layout, all integers little-endian::

    "GDCK" | u32 version
    u32 n | config text (UTF-8, canonical key=value form)
    u32 n | RNG state (UTF-8 JSON)
    u32 tensor count
    per tensor: u32 n | name | u32 rank | u64 dims... | <f8 values
    32-byte SHA-256 of everything above
"""
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from gnn_encoder.ml.encoders import CrossEncoderParams, DualEncoder
from gnn_encoder.ml.gnncore import GnnParams
from gnn_encoder.ml.numkit import tensor_fingerprint
from gnn_encoder.models.errors import (
    CheckpointError,
    CheckpointFingerprintError,
    CheckpointMagicError,
    CheckpointVersionError,
    ConfigError,
)
from gnn_encoder.models.training import TrainConfig
from gnn_encoder.utils.logger import get_logger

logger = get_logger(__name__)

MAGIC = b"GDCK"
VERSION = 1
DIGEST_SIZE = 32


def model_tensors(
    dual: DualEncoder, cross: Optional[CrossEncoderParams] = None, gnn: Optional[GnnParams] = None
) -> dict[str, np.ndarray]:
    """Every parameter tensor under its checkpoint name."""
    out = dict(dual.tensors())
    if cross is not None:
        out.update({f"cross.{k}": v for k, v in cross.tensors().items()})
    if gnn is not None:
        out.update({f"gnn.{k}": v for k, v in gnn.tensors().items()})
    return out


def model_fingerprint(
    dual: DualEncoder, cross: Optional[CrossEncoderParams] = None, gnn: Optional[GnnParams] = None
) -> bytes:
    """Fingerprint of the checkpoint that holds exactly these parameters."""
    return tensor_fingerprint(model_tensors(dual, cross, gnn))


@dataclass
class Checkpoint:
    """Everything needed to resume or serve a model.

    ``rng_state`` holds the base seed and the number of finished joint
    epochs. Every epoch draws from ``SeedSequence([seed, epoch])``, so the
    two numbers are enough to continue a run bitwise.
    """

    config: TrainConfig
    dual: DualEncoder
    cross: Optional[CrossEncoderParams] = None
    gnn: Optional[GnnParams] = None
    rng_state: dict[str, Any] = field(default_factory=dict)
    version: int = VERSION

    def tensors(self) -> dict[str, np.ndarray]:
        return model_tensors(self.dual, self.cross, self.gnn)

    @property
    def fingerprint(self) -> bytes:
        """Content hash over every parameter tensor."""
        return model_fingerprint(self.dual, self.cross, self.gnn)


def _block(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", ckpt.version)]
    parts.append(_block(ckpt.config.to_text().encode("utf-8")))
    parts.append(_block(json.dumps(ckpt.rng_state, sort_keys=True).encode("utf-8")))
    tensors = ckpt.tensors()
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        parts.append(_block(name.encode("utf-8")))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError("unexpected end of checkpoint body")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def block(self) -> bytes:
        return self.take(self.u32())


def decode_checkpoint(data: bytes) -> Checkpoint:
    """Verify magic, then version, then the content hash, then parse."""
    if not MAGIC.startswith(data[:len(MAGIC)]):
        raise CheckpointMagicError("not a checkpoint file (bad magic)")
    if len(data) >= 8:
        version = struct.unpack_from("<I", data, 4)[0]
        if version != VERSION:
            raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    if len(data) < 8 + DIGEST_SIZE:
        raise CheckpointFingerprintError("checkpoint truncated")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointFingerprintError("checkpoint fingerprint mismatch (corrupt or truncated file)")

    reader = _Reader(body)
    reader.take(8)
    try:
        config = TrainConfig.from_text(reader.block().decode("utf-8"))
    except ConfigError as e:
        raise CheckpointError(f"invalid config block: {e}") from e
    rng_state = json.loads(reader.block().decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.block().decode("utf-8")
        rank = reader.u32()
        shape = struct.unpack(f"<{rank}Q", reader.take(8 * rank))
        count = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(reader.take(8 * count), dtype="<f8").astype(np.float64)
        tensors[name] = values.reshape(shape)
    if reader.offset != len(body):
        raise CheckpointError("trailing bytes after the last tensor")

    try:
        dual = DualEncoder.from_tensors(tensors, tied=config.tie_encoders)
        cross = None
        cross_tensors = {k[6:]: v for k, v in tensors.items() if k.startswith("cross.")}
        if cross_tensors:
            cross = CrossEncoderParams.from_tensors(cross_tensors, frozen=True)
        gnn = None
        gnn_tensors = {k[4:]: v for k, v in tensors.items() if k.startswith("gnn.")}
        if gnn_tensors:
            gnn = GnnParams.from_tensors(
                gnn_tensors, heads=config.heads, slope=config.leaky_slope, activation=config.activation
            )
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"inconsistent tensors: {e}") from e
    return Checkpoint(config=config, dual=dual, cross=cross, gnn=gnn, rng_state=rng_state)


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(ckpt))
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    ckpt = decode_checkpoint(data)
    logger.info(f"Loaded checkpoint from {path}")
    return ckpt
