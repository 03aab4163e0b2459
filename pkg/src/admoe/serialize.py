"""Versioned binary model snapshots.

Layout (all integers little-endian)::

    magic      8 bytes  b"ADMOESNP"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 JSON (architecture arguments)
    n_tensors  u32
    per tensor: name_len u16, name (UTF-8), ndim u8, ndim x u64 dims
    payload    each tensor as row-major float64 little-endian, manifest order
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import AdmoeModel

MAGIC = b"ADMOESNP"
VERSION = 1


class SnapshotError(ValueError):
    pass


def dumps(model: AdmoeModel) -> bytes:
    named = model.named_parameters()
    meta = json.dumps(model.arch, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(named))]
    for name, p, _ in named:
        raw = name.encode()
        parts.append(struct.pack("<HB", len(raw), p.ndim) + raw)
        parts.append(struct.pack(f"<{p.ndim}Q", *p.shape))
    for _, p, _ in named:
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> AdmoeModel:
    if blob[:8] != MAGIC:
        raise SnapshotError("not an ADMoE snapshot (bad magic)")
    pos = 8
    version, meta_len = struct.unpack_from("<II", blob, pos)
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    pos += 8
    arch = json.loads(blob[pos : pos + meta_len])
    pos += meta_len
    (n_tensors,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    manifest = []
    for _ in range(n_tensors):
        name_len, ndim = struct.unpack_from("<HB", blob, pos)
        pos += 3
        name = blob[pos : pos + name_len].decode()
        pos += name_len
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        manifest.append((name, shape))
    model = AdmoeModel(**arch)
    named = model.named_parameters()
    if [(n, tuple(p.shape)) for n, p, _ in named] != [(n, tuple(s)) for n, s in manifest]:
        raise SnapshotError("snapshot manifest does not match the architecture it declares")
    state = []
    for _, shape in manifest:
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape)
        state.append(arr.astype(np.float64))
        pos += 8 * size
    if pos != len(blob):
        raise SnapshotError("trailing bytes after snapshot payload")
    model.set_state(state)
    return model


def save(model: AdmoeModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load(path) -> AdmoeModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
