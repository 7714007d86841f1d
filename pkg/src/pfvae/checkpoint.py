"""Binary checkpoint format.

Layout (integers little endian)::

    b"PFVAECKP"
    u32 version
    u32 n, n bytes       UTF-8 config echo (``key = value`` lines)
    u32 count            parameter tensors, then ``count`` tensor records
    u32 count            optimizer/trainer state tensors, same record layout
    u64 iteration
    u32 n, n bytes       RNG state (JSON of the numpy bit-generator state)

Tensor record: u32 name length, UTF-8 name, u32 rank, rank x u32 dims,
float64 payload.
"""
from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"PFVAECKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    params: dict[str, np.ndarray]
    state: dict[str, np.ndarray]
    iteration: int
    rng_state: dict


def _write_tensors(buf: io.BytesIO, tensors: dict[str, np.ndarray]):
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)) + raw)
        buf.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        buf.write(arr.tobytes(order="C"))


def encode(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", VERSION))
    cfg = ckpt.config_text.encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)) + cfg)
    _write_tensors(buf, ckpt.params)
    _write_tensors(buf, ckpt.state)
    buf.write(struct.pack("<Q", ckpt.iteration))
    rng = json.dumps(ckpt.rng_state, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(rng)) + rng)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensors(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (n,) = self.unpack("<I")
            name = self.take(n).decode("utf-8")
            (rank,) = self.unpack("<I")
            dims = self.unpack(f"<{rank}I")
            size = int(np.prod(dims, dtype=np.int64))
            out[name] = np.frombuffer(self.take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
        return out


def decode(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(8) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    (n,) = r.unpack("<I")
    config_text = r.take(n).decode("utf-8")
    params = r.tensors()
    state = r.tensors()
    (iteration,) = r.unpack("<Q")
    (n,) = r.unpack("<I")
    rng_state = json.loads(r.take(n).decode("utf-8"))
    return Checkpoint(config_text, params, state, iteration, rng_state)


def save(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(ckpt))
    os.replace(tmp, path)


def load(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
