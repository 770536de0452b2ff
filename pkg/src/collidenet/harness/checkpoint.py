"""Checkpoint container.

Layout (little-endian)::

    b"CNCK"  uint32 version
    uint32 len + UTF-8 config text      (canonical ``section.key = value``)
    uint32 len + UTF-8 metadata text    (``key = value`` lines)
    uint32 count, then per tensor: uint32 len + UTF-8 name, CNT1 blob

Parameters are stored as float32, so a :class:`Checkpoint` keeps its state
already rounded to float32: evaluating the in-memory object and evaluating
the reloaded file give identical numbers.
"""
from __future__ import annotations

import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ..config import ExperimentConfig, dumps, loads
from ..errors import ConfigError, LoadError
from ..numerics.tensorio import decode_tensor, encode_tensor
from ..temporal import CollideNet

MAGIC = b"CNCK"
VERSION = 1


def round_state(state) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((k, np.asarray(v, dtype=np.float32).astype(np.float64)) for k, v in state.items())


@dataclass
class Checkpoint:
    config: ExperimentConfig
    state: "OrderedDict[str, np.ndarray]"
    meta: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: CollideNet, config: ExperimentConfig, **meta) -> "Checkpoint":
        return cls(config, round_state(model.state_dict()), {k: str(v) for k, v in meta.items()})

    def build_model(self) -> CollideNet:
        model = CollideNet(self.config.model, seed=0)
        model.load_state_dict(self.state)
        model.eval()
        return model


def _text(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _text(dumps(ckpt.config))]
    parts.append(_text("".join(f"{k} = {v}\n" for k, v in sorted(ckpt.meta.items()))))
    parts.append(struct.pack("<I", len(ckpt.state)))
    for name, arr in ckpt.state.items():
        parts.append(_text(name))
        parts.append(encode_tensor(arr))
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if blob[:4] != MAGIC:
        raise LoadError("not a checkpoint (bad magic)")
    pos = 4

    def u32():
        nonlocal pos
        try:
            (v,) = struct.unpack_from("<I", blob, pos)
        except struct.error as exc:
            raise LoadError("truncated checkpoint") from exc
        pos += 4
        return v

    def text():
        nonlocal pos
        n = u32()
        if pos + n > len(blob):
            raise LoadError("truncated checkpoint")
        s = blob[pos : pos + n].decode("utf-8")
        pos += n
        return s

    version = u32()
    if version != VERSION:
        raise LoadError(f"unsupported checkpoint version {version}")
    try:
        config = loads(text())
    except ConfigError as exc:
        raise LoadError(f"checkpoint config: {exc}") from exc
    meta = {}
    for line in text().splitlines():
        k, _, v = line.partition(" = ")
        meta[k] = v
    state = OrderedDict()
    for _ in range(u32()):
        name = text()
        state[name], pos = decode_tensor(blob, pos)
    if pos != len(blob):
        raise LoadError("trailing bytes after checkpoint")
    return Checkpoint(config, state, meta)


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(ckpt))


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            return decode_checkpoint(fh.read())
    except OSError as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc
