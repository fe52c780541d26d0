"""Binary checkpoints: full training state in one self-describing file.

Layout (all integers little-endian):

    magic   b"SWPG"
    version u32 (currently 1)
    hlen    u32, then hlen bytes of UTF-8 JSON metadata (model config,
            training config, epoch, optimizer step counts, RNG state)
    count   u32
    count tensor records:
        nlen u16, nlen bytes of UTF-8 name
        ndim u8, ndim u32 dims
        raw float32 data, C order

Saving the same state twice produces identical bytes (the JSON is emitted
with sorted keys), and save -> load -> save round-trips bit-exactly.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from . import tensor as T
from .errors import (
    CheckpointDimError,
    CheckpointError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from .generator import ModelConfig, build_generator
from .discriminator import build_discriminator
from .training import AdamState, TrainConfig, TrainingState

MAGIC = b"SWPG"
VERSION = 1
MAX_NDIM = 8
MAX_ELEMENTS = 1 << 30  # ~4 GiB of float32; nothing we write comes close


def _named_tensors(state: TrainingState):
    """Every array worth persisting, in a fixed order."""
    for name, t in state.gen.named():
        yield "g." + name, t.data
    for name, t in state.gen.named_buffers():
        yield "g." + name, t.data
    for name, t in state.disc.named():
        yield "d." + name, t.data
    for name, t in state.disc.named_buffers():
        yield "d." + name, t.data
    for prefix, adam in (("adam_g", state.adam_g), ("adam_d", state.adam_d)):
        for key in sorted(adam.m):
            yield f"{prefix}.m.{key}", adam.m[key]
        for key in sorted(adam.v):
            yield f"{prefix}.v.{key}", adam.v[key]


def save_bytes(state: TrainingState) -> bytes:
    header = {
        "model": state.model_cfg.to_dict(),
        "training": state.train_cfg.to_dict(),
        "epoch": state.epoch,
        "adam_g_t": state.adam_g.t,
        "adam_d_t": state.adam_d.t,
        "rng_state": state.rng.bit_generator.state,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    records = list(_named_tensors(state))
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(hbytes)), hbytes]
    out.append(struct.pack("<I", len(records)))
    for name, arr in records:
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def save_checkpoint(state: TrainingState, path) -> None:
    data = save_bytes(state)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"file ends inside {what}: need {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what):
        return self.read(1, what)[0]

    def u16(self, what):
        return struct.unpack("<H", self.read(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.read(4, what))[0]


def load_bytes(data: bytes) -> TrainingState:
    r = _Reader(data)
    magic = r.read(4, "magic")
    if magic != MAGIC:
        raise CheckpointMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    hlen = r.u32("header length")
    try:
        header = json.loads(r.read(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from exc
    for key in ("model", "training", "epoch", "adam_g_t", "adam_d_t", "rng_state"):
        if key not in header:
            raise CheckpointError(f"header missing {key!r}")

    count = r.u32("tensor count")
    arrays: dict[str, np.ndarray] = {}
    for i in range(count):
        nlen = r.u16(f"name length of tensor {i}")
        name = r.read(nlen, f"name of tensor {i}").decode("utf-8")
        ndim = r.u8(f"rank of {name!r}")
        if ndim > MAX_NDIM:
            raise CheckpointDimError(f"tensor {name!r} declares rank {ndim} (max {MAX_NDIM})")
        dims = [r.u32(f"dims of {name!r}") for _ in range(ndim)]
        elements = 1
        for d in dims:
            elements *= d
        if elements > MAX_ELEMENTS:
            raise CheckpointDimError(f"tensor {name!r} declares {elements} elements")
        raw = r.read(4 * elements, f"data of {name!r}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(T.DTYPE)

    try:
        model_cfg = ModelConfig.from_dict(header["model"])
        train_cfg = TrainConfig(**header["training"])
        train_cfg.validate()
    except TypeError as exc:
        raise CheckpointError(f"unrecognized config field in header: {exc}") from exc

    state = TrainingState(
        model_cfg=model_cfg,
        train_cfg=train_cfg,
        gen=build_generator(model_cfg, seed=model_cfg.seed),
        disc=build_discriminator(seed=model_cfg.seed + 1),
        adam_g=AdamState(t=int(header["adam_g_t"])),
        adam_d=AdamState(t=int(header["adam_d_t"])),
        epoch=int(header["epoch"]),
        rng=np.random.default_rng(0),
    )
    try:
        state.rng.bit_generator.state = header["rng_state"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid RNG state: {exc}") from exc

    used = set()
    for group, named in (("g.", state.gen), ("d.", state.disc)):
        for name, t in list(named.named()) + list(named.named_buffers()):
            full = group + name
            if full not in arrays:
                raise CheckpointError(f"checkpoint is missing tensor {full!r}")
            if arrays[full].shape != t.data.shape:
                raise CheckpointError(
                    f"tensor {full!r} has shape {arrays[full].shape}, expected {t.data.shape}"
                )
            t.data = np.ascontiguousarray(arrays[full])
            used.add(full)
    for prefix, adam in (("adam_g", state.adam_g), ("adam_d", state.adam_d)):
        for name, arr in arrays.items():
            if name.startswith(prefix + ".m."):
                adam.m[name[len(prefix) + 3 :]] = np.ascontiguousarray(arr)
                used.add(name)
            elif name.startswith(prefix + ".v."):
                adam.v[name[len(prefix) + 3 :]] = np.ascontiguousarray(arr)
                used.add(name)
    unknown = set(arrays) - used
    if unknown:
        raise CheckpointError(f"checkpoint contains unknown tensors: {sorted(unknown)[:5]}")
    return state


def load_checkpoint(path) -> TrainingState:
    with open(path, "rb") as fh:
        return load_bytes(fh.read())
