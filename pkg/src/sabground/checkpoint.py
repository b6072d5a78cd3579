"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SABCKPT1"
    u32 config_len, config JSON (UTF-8)
    u64 step
    u32 n_params, then n_params tensor records
    u8  has_optimizer; if 1: u64 t, u32 n, n records of first moments,
        u32 n, n records of second moments

    tensor record: u16 name_len, name (UTF-8), u8 dtype tag (1=f32, 2=f64),
                   u8 ndim, u32 dims[ndim], row-major little-endian payload
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SABCKPT1"
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class CheckpointError(ValueError):
    pass


@dataclass
class CheckpointInfo:
    step: int
    config: dict
    params: dict
    optimizer: dict | None


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    tag = _TAGS.get(arr.dtype)
    if tag is None:
        raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", tag, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self):
        (n,) = self.unpack("<H")
        name = self.take(n).decode("utf-8")
        tag, ndim = self.unpack("<BB")
        if tag not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype tag {tag}")
        shape = self.unpack(f"<{ndim}I") if ndim else ()
        dt = _DTYPES[tag]
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(self.take(count * dt.itemsize), dtype=dt).reshape(shape)
        return name, arr.astype(dt.newbyteorder("="))

    def tensors(self):
        (n,) = self.unpack("<I")
        return dict(self.tensor() for _ in range(n))


def encode(model, optimizer=None, step=0, config=None) -> bytes:
    cfg = json.dumps(config.to_dict() if hasattr(config, "to_dict") else (config or {}), sort_keys=True).encode("utf-8")
    named = model.named_parameters()
    parts = [MAGIC, struct.pack("<I", len(cfg)), cfg, struct.pack("<Q", step), struct.pack("<I", len(named))]
    parts += [_pack_tensor(name, p.data) for name, p in named]
    if optimizer is None:
        parts.append(b"\x00")
    else:
        parts += [b"\x01", struct.pack("<Q", optimizer.t)]
        for moments in (optimizer.m, optimizer.v):
            parts.append(struct.pack("<I", len(moments)))
            parts += [_pack_tensor(name, moments[name]) for name, _ in named]
    return b"".join(parts)


def decode(buf: bytes) -> CheckpointInfo:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    (n,) = r.unpack("<I")
    config = json.loads(r.take(n).decode("utf-8"))
    (step,) = r.unpack("<Q")
    params = r.tensors()
    (has_opt,) = r.unpack("<B")
    opt = None
    if has_opt:
        (t,) = r.unpack("<Q")
        opt = {"t": t, "m": r.tensors(), "v": r.tensors()}
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint")
    return CheckpointInfo(step, config, params, opt)


def save_checkpoint(path, model, optimizer=None, step=0, config=None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(model, optimizer, step, config))
    tmp.replace(path)


def read_checkpoint(path) -> CheckpointInfo:
    return decode(Path(path).read_bytes())


def load_checkpoint(path, model, optimizer=None) -> CheckpointInfo:
    """Copy parameters (and optimizer state) from ``path`` into live objects."""
    info = read_checkpoint(path)
    named = dict(model.named_parameters())
    if set(named) != set(info.params):
        missing = sorted(set(named) - set(info.params))
        extra = sorted(set(info.params) - set(named))
        raise CheckpointError(f"parameter names differ; missing={missing} unexpected={extra}")
    for name, p in named.items():
        arr = info.params[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"{name}: shape {arr.shape} does not fit {p.data.shape}")
        p.data = arr.astype(p.data.dtype, copy=True)
    if optimizer is not None and info.optimizer is not None:
        optimizer.load_state_dict(info.optimizer)
    return info
