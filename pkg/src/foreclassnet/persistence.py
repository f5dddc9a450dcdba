"""Single-file checkpoints and the artefact writers used by the command line.

Checkpoint layout (all integers little-endian)::

    b"FCN1"                         magic
    u32  version
    u32  n, then n bytes            run configuration, INI text (UTF-8)
    u32  parameter count
    per parameter:
        u16 n, n bytes              name (UTF-8)
        u8  ndim, ndim x u32        shape
        float64 LE payload          row-major values
    u32  n, then n bytes            model RNG state, JSON
    32 bytes                        SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ChecksumError, ForeClassNetError, UnsupportedVersionError
from .network import ForeClassNet

MAGIC = b"FCN1"
VERSION = 1
DIGEST = 32


@dataclass
class Checkpoint:
    config: RunConfig
    params: dict[str, np.ndarray]
    rng_state: dict


def encode_checkpoint(model: ForeClassNet, run_config: RunConfig | None = None) -> bytes:
    run_config = run_config or RunConfig(model=model.config, seed=model.config.seed)
    parts = [MAGIC, struct.pack("<I", VERSION)]
    text = run_config.to_ini().encode("utf-8")
    parts += [struct.pack("<I", len(text)), text]
    named = model.named_parameters()
    parts.append(struct.pack("<I", len(named)))
    for name, p in named:
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", p.data.ndim)]
        parts.append(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    state = json.dumps(model.rng.bit_generator.state, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(state)), state]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ChecksumError("checkpoint ends early")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < len(MAGIC) + 4 + DIGEST or buf[: len(MAGIC)] != MAGIC:
        raise ChecksumError("not a checkpoint file or truncated header")
    body, digest = buf[:-DIGEST], buf[-DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch; file is corrupt or truncated")
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise UnsupportedVersionError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    (n,) = r.unpack("<I")
    config = RunConfig.from_ini(r.take(n).decode("utf-8"))
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    (n,) = r.unpack("<I")
    rng_state = json.loads(r.take(n).decode("utf-8"))
    if r.pos != len(body):
        raise ChecksumError("trailing bytes after checkpoint payload")
    return Checkpoint(config, params, rng_state)


def restore(ckpt: Checkpoint, model: ForeClassNet | None = None) -> ForeClassNet:
    """Build a model from the stored config, or load into ``model`` (shapes must agree)."""
    model = ForeClassNet(ckpt.config.model) if model is None else model
    model.load_state_dict(ckpt.params)
    model.rng.bit_generator.state = ckpt.rng_state
    return model


def save_checkpoint(model: ForeClassNet, path, run_config: RunConfig | None = None) -> None:
    write_bytes(path, encode_checkpoint(model, run_config))


def load_checkpoint(path, model: ForeClassNet | None = None) -> tuple[ForeClassNet, RunConfig]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise ForeClassNetError(f"cannot read checkpoint {path}: {exc}") from exc
    ckpt = decode_checkpoint(buf)
    return restore(ckpt, model), ckpt.config


def write_bytes(path, data: bytes) -> None:
    """Write via a temporary sibling and rename so readers never see half a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_text(path, text: str) -> None:
    write_bytes(path, text.encode("utf-8"))
