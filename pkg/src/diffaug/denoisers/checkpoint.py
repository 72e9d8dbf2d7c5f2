"""Binary parameter checkpoints.

Layout (little-endian):

    magic (4 bytes) | u32 version | u32 config length | config JSON |
    u32 parameter count | per parameter: u32 name length, name (utf-8),
    u32 ndim, u32 dims..., f32 payload

Parameters are written in the mapping's order, which for models is the
declaration order of their layers.
"""
import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from ..exceptions import CheckpointError
from ..numerics.grid import Grid

CHECKPOINT_VERSION = 1

_U32 = struct.Struct("<I")


def save_checkpoint(
    path: Path, magic: bytes, config: BaseModel, params: Mapping[str, Grid]
) -> None:
    """Write config and parameters to path."""
    if len(magic) != 4:
        raise CheckpointError(f"magic must be 4 bytes, got {magic!r}")
    config_json = config.model_dump_json().encode("utf-8")
    chunks = [magic, _U32.pack(CHECKPOINT_VERSION), _U32.pack(len(config_json)), config_json]
    chunks.append(_U32.pack(len(params)))
    for name, value in params.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(value, dtype="<f4")
        chunks.append(_U32.pack(len(encoded)) + encoded)
        chunks.append(struct.pack(f"<{1 + array.ndim}I", array.ndim, *array.shape))
        chunks.append(array.tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint while reading {what} at byte {self.offset}"
            )
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def u32(self, what: str) -> int:
        return int(_U32.unpack(self.take(4, what))[0])


def load_checkpoint(path: Path, magic: bytes) -> tuple[str, dict[str, Grid]]:
    """Read (config JSON, parameters) from path.

    Raises:
        CheckpointError: On wrong magic, unknown version, or truncation.
    """
    reader = _Reader(Path(path).read_bytes())
    found = reader.take(4, "magic")
    if found != magic:
        raise CheckpointError(f"expected magic {magic!r}, found {found!r}")
    version = reader.u32("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_json = reader.take(reader.u32("config length"), "config").decode("utf-8")
    params: dict[str, Grid] = {}
    for _ in range(reader.u32("parameter count")):
        name = reader.take(reader.u32("name length"), "name").decode("utf-8")
        ndim = reader.u32(f"{name} ndim")
        shape = tuple(reader.u32(f"{name} dims") for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(4 * count, f"{name} payload")
        params[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    if reader.offset != len(reader.data):
        raise CheckpointError(f"{len(reader.data) - reader.offset} trailing bytes in checkpoint")
    return config_json, params
