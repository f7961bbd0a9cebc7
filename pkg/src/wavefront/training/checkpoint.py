"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      4 bytes   b"WFL1"
    version    uint32
    json_len   uint64
    json       json_len bytes, UTF-8 (config, config hash, step, rng state, ...)
    n_tensors  uint32
    n_tensors times:
        name_len  uint32
        name      name_len bytes, UTF-8
        rank      uint32
        extents   rank x uint64
        data      prod(extents) x float64

Tensor names are namespaced: ``param/<name>`` for model parameters,
``adam.m/<name>`` and ``adam.v/<name>`` for optimizer moments and
``init/<name>`` for the frontend parameters as initialized.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

MAGIC = b"WFL1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    config_hash: str
    step: int
    rng_state: dict
    params: Dict[str, np.ndarray]
    trainable: Dict[str, bool] = field(default_factory=dict)
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_step: int = 0
    init_params: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "config": self.config, "config_hash": self.config_hash, "step": self.step,
            "rng_state": self.rng_state, "trainable": self.trainable,
            "optimizer_step": self.optimizer_step, "meta": self.meta,
        }

    def tensors(self) -> Dict[str, np.ndarray]:
        out = {}
        for prefix, group in (("param/", self.params), ("adam.m/", self.adam_m),
                              ("adam.v/", self.adam_v), ("init/", self.init_params)):
            for name in sorted(group):
                out[prefix + name] = group[name]
        return out


def _write_tensor(buf: io.BytesIO, name: str, array: np.ndarray) -> None:
    raw = name.encode("utf-8")
    array = np.asarray(array, dtype="<f8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", array.ndim))
    buf.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    buf.write(np.ascontiguousarray(array).tobytes())


def to_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    blob = json.dumps(ckpt.header(), sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    tensors = ckpt.tensors()
    buf.write(struct.pack("<I", len(tensors)))
    for name, array in tensors.items():
        _write_tensor(buf, name, array)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (json_len,) = r.unpack("<Q")
    header = json.loads(r.take(json_len).decode("utf-8"))
    (count,) = r.unpack("<I")
    groups = {"param": {}, "adam.m": {}, "adam.v": {}, "init": {}}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        array = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        prefix, _, key = name.partition("/")
        if prefix not in groups:
            raise CheckpointError(f"unknown tensor namespace in {name!r}")
        groups[prefix][key] = array
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after the last tensor")
    return Checkpoint(
        config=header["config"], config_hash=header["config_hash"], step=header["step"],
        rng_state=header["rng_state"], params=groups["param"], trainable=header.get("trainable", {}),
        adam_m=groups["adam.m"], adam_v=groups["adam.v"], optimizer_step=header.get("optimizer_step", 0),
        init_params=groups["init"], meta=header.get("meta", {}),
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
