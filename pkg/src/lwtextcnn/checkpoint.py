"""Versioned binary checkpoints with bit-exact float64 round-trips.

Layout (all integers little-endian)::

    magic      8 bytes   b"LWTCKPT\\x00"
    version    u32
    spec hash  32 bytes  sha256 of the spec text
    spec text  u64 length + UTF-8
    optimizer  u64 length + UTF-8 (empty when no optimizer state was saved)
    meta       u64 length + UTF-8 key=value lines
    tensors    u32 count, then per tensor:
                 u16 name length + UTF-8 name, u8 ndim, ndim x u64 dims,
                 prod(dims) x float64
    checksum   32 bytes  sha256 of everything above

Tensor names are prefixed ``param/``, ``buffer/`` or ``opt.<slot>/``.
Files are written to a temporary sibling and renamed into place.
"""
from __future__ import annotations

import hashlib
import io
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch import ArchSpec, Model, build
from .errors import CheckpointFormatError
from .optim import OptimizerState
from .tensor import Rng

MAGIC = b"LWTCKPT\x00"
VERSION = 1


@dataclass
class Checkpoint:
    spec: ArchSpec
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    optimizer: OptimizerState | None = None
    meta: dict[str, str] = field(default_factory=dict)

    def to_model(self) -> Model:
        model = build(self.spec, Rng(0))
        model.load_state(self.params, self.buffers)
        return model


def _text(buf: io.BytesIO, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack("<Q", len(b)))
    buf.write(b)


def _tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    buf.write(struct.pack("<H", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(arr.tobytes())


def serialize(model: Model, optimizer: OptimizerState | None = None, meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    spec_text = model.spec.to_text()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(hashlib.sha256(spec_text.encode()).digest())
    _text(buf, spec_text)
    _text(buf, optimizer.to_text() if optimizer is not None else "")
    _text(buf, "".join(f"{k}={v}\n" for k, v in (meta or {}).items()))
    tensors = [(f"param/{n}", t.data) for n, t in model.params.items()]
    tensors += [(f"buffer/{n}", a) for n, a in model.buffers().items()]
    if optimizer is not None:
        for slot, values in optimizer.slots().items():
            tensors += [(f"opt.{slot}/{n}", values[n]) for n in sorted(values)]
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        _tensor(buf, name, arr)
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, model: Model, optimizer: OptimizerState | None = None,
                    meta: dict | None = None) -> None:
    data = serialize(model, optimizer, meta)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (n,) = self.unpack("<Q")
        return self.take(n).decode("utf-8")


def deserialize(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic bytes)")
    if len(data) < len(MAGIC) + 4 + 32:
        raise CheckpointFormatError("checkpoint is truncated")
    (version,) = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    body, checksum = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != checksum:
        raise CheckpointFormatError("checkpoint checksum mismatch (truncated or corrupted)")
    r = _Reader(body)
    r.take(len(MAGIC) + 4)
    spec_hash = r.take(32)
    spec_text = r.text()
    if hashlib.sha256(spec_text.encode()).digest() != spec_hash:
        raise CheckpointFormatError("spec hash does not match the stored spec text")
    opt_text = r.text()
    meta_text = r.text()
    (count,) = r.unpack("<I")
    params, buffers = {}, {}
    slots: dict[str, dict] = {"m": {}, "v": {}, "velocity": {}}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
        kind, _, key = name.partition("/")
        if kind == "param":
            params[key] = arr
        elif kind == "buffer":
            buffers[key] = arr
        elif kind.startswith("opt.") and kind[4:] in slots:
            slots[kind[4:]][key] = arr
        else:
            raise CheckpointFormatError(f"unknown tensor record {name!r}")
    if r.pos != len(body):
        raise CheckpointFormatError("trailing bytes after tensor records")
    spec = ArchSpec.from_text(spec_text)
    optimizer = None
    if opt_text:
        optimizer = OptimizerState.from_text(opt_text)
        optimizer.m, optimizer.v, optimizer.velocity = slots["m"], slots["v"], slots["velocity"]
    meta = dict(line.split("=", 1) for line in meta_text.splitlines() if line)
    return Checkpoint(spec, params, buffers, optimizer, meta)


def load_checkpoint(path) -> Checkpoint:
    return deserialize(Path(path).read_bytes())
