"""Binary checkpoints: ``HMVAE1`` magic, descriptor, little-endian f32 parameters."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"HMVAE1"


def to_bytes(model) -> bytes:
    desc = model.descriptor()
    blob = json.dumps(desc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(blob)), blob]
    for name, _ in desc["params"]:
        parts.append(np.ascontiguousarray(model.params[name].data, dtype="<f4").tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes):
    from .hmvae import ArchConfig, HmVaeModel
    from .skeleton import Skeleton
    from .trajectory import TrajectoryConfig, TrajectoryModel

    if buf[:len(MAGIC)] != MAGIC:
        raise ValueError("not a checkpoint: bad magic header")
    pos = len(MAGIC)
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    desc = json.loads(buf[pos:pos + n].decode("utf-8"))
    pos += n
    skeleton = Skeleton.from_dict(desc["skeleton"])
    if desc["kind"] == "hmvae":
        model = HmVaeModel(ArchConfig(**desc["arch"]), skeleton)
    elif desc["kind"] == "trajectory":
        model = TrajectoryModel(TrajectoryConfig(**desc["config"]), skeleton)
    else:
        raise ValueError(f"unknown checkpoint kind {desc['kind']!r}")
    for name, shape in desc["params"]:
        count = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).astype(np.float32).reshape(shape)
        pos += 4 * count
        model.params[name] = Tensor(arr, requires_grad=True)
    if pos != len(buf):
        raise ValueError(f"checkpoint has {len(buf) - pos} trailing bytes")
    return model


def save(model, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path: str | Path):
    return from_bytes(Path(path).read_bytes())
