"""Versioned little-endian checkpoint files.

Layout::

    b"MUE1"                      magic
    u32 format_version
    u64 n, n bytes               JSON header (config, iteration, rng state, scalars)
    u32 n_arrays
    repeated:
        u32 name_len, name bytes (utf-8)
        u32 rank, rank * u32 extents
        prod(extents) * f32      row-major data

The JSON header is written with sorted keys, so save -> load -> save is
byte-identical.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from .autodiff import AdamState
from .codebook import CodeBook

MAGIC = b"MUE1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    header: dict
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", FORMAT_VERSION))
        blob = json.dumps(self.header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        buf.write(struct.pack("<Q", len(blob)))
        buf.write(blob)
        buf.write(struct.pack("<I", len(self.arrays)))
        for name in sorted(self.arrays):
            arr = np.ascontiguousarray(self.arrays[name], dtype="<f4")
            raw_name = name.encode("utf-8")
            buf.write(struct.pack("<I", len(raw_name)))
            buf.write(raw_name)
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        pos = 0

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(raw):
                raise CheckpointError(f"truncated checkpoint at byte offset {pos}")
            out = raw[pos:pos + n]
            pos += n
            return out

        if take(4) != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", take(4))
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
        (n,) = struct.unpack("<Q", take(8))
        header = json.loads(take(n).decode("utf-8"))
        (count,) = struct.unpack("<I", take(4))
        arrays = {}
        for _ in range(count):
            (ln,) = struct.unpack("<I", take(4))
            name = take(ln).decode("utf-8")
            (rank,) = struct.unpack("<I", take(4))
            shape = struct.unpack(f"<{rank}I", take(4 * rank))
            size = int(np.prod(shape)) if rank else 1
            arrays[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
        if pos != len(raw):
            raise CheckpointError(f"trailing bytes after offset {pos}")
        return cls(header, arrays)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def capture(model, opt: AdamState, iteration: int, config_text: str, rng_state: dict) -> Checkpoint:
    book: CodeBook = model.book
    arrays = {f"param/{k}": p.data for k, p in model.parameters().items()}
    for k, m in opt.m.items():
        arrays[f"adam_m/{k}"] = m
        arrays[f"adam_v/{k}"] = opt.v[k]
    arrays["codebook/codes"] = book.codes
    arrays["codebook/ema_count"] = book.ema_count
    arrays["codebook/ema_sum"] = book.ema_sum
    header = {
        "config": config_text,
        "iteration": int(iteration),
        "rng_state": rng_state,
        "adam": {"step": opt.step, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
        "codebook": {
            "decay": book.decay,
            "eps": book.eps,
            "active_threshold": book.active_threshold,
            "updates": book.updates,
            "frozen": book.frozen,
            "usage": [int(u) for u in book.usage],
        },
    }
    return Checkpoint(header, arrays)


def restore(ckpt: Checkpoint, model, opt: AdamState) -> None:
    """Load parameters, optimizer and codebook into ``model``/``opt``.

    Every shape is checked before anything is written.
    """
    params = model.parameters()
    for k, p in params.items():
        a = ckpt.arrays.get(f"param/{k}")
        if a is None:
            raise CheckpointError(f"checkpoint lacks parameter {k}")
        if a.shape != p.data.shape:
            raise CheckpointError(f"parameter {k}: checkpoint shape {a.shape} != model shape {p.data.shape}")
    extra = [k for k in ckpt.arrays if k.startswith("param/") and k[6:] not in params]
    if extra:
        raise CheckpointError(f"checkpoint has unknown parameters {extra[:3]}")
    for k in ckpt.arrays:
        if k.startswith(("adam_m/", "adam_v/")):
            name = k.split("/", 1)[1]
            if name not in params or ckpt.arrays[k].shape != params[name].data.shape:
                raise CheckpointError(f"optimizer state {k} does not match the model")
    codes = ckpt.arrays.get("codebook/codes")
    if codes is None or codes.shape != (model.arch.n_codes, model.arch.code_dim):
        raise CheckpointError("codebook shape does not match the model")

    for k, p in params.items():
        p.data = ckpt.arrays[f"param/{k}"].astype(p.data.dtype)
    a = ckpt.header["adam"]
    opt.step, opt.beta1, opt.beta2, opt.eps = a["step"], a["beta1"], a["beta2"], a["eps"]
    opt.m = {k[7:]: v.copy() for k, v in ckpt.arrays.items() if k.startswith("adam_m/")}
    opt.v = {k[7:]: v.copy() for k, v in ckpt.arrays.items() if k.startswith("adam_v/")}
    cb = ckpt.header["codebook"]
    model.book = CodeBook(codes=codes.copy(), ema_count=ckpt.arrays["codebook/ema_count"].copy(),
                          ema_sum=ckpt.arrays["codebook/ema_sum"].copy(), decay=cb["decay"], eps=cb["eps"],
                          active_threshold=cb["active_threshold"], usage=np.array(cb["usage"], dtype=np.int64),
                          updates=cb["updates"], frozen=cb["frozen"])
