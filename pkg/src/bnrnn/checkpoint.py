"""Binary checkpoints: magic + version + JSON header + named float64 records
+ trailing CRC32. Saves are atomic (temp file then rename); any corruption,
truncation, or unknown version is rejected outright."""

import json
import os
import struct
import zlib

import numpy as np

from .errors import IntegrityError
from .recurrent import build_stack

MAGIC = b"BNRN"
VERSION = 1


def _pack_record(name, array):
    arr = np.ascontiguousarray(array, dtype=np.float64)
    encoded = name.encode("utf-8")
    parts = [struct.pack("<I", len(encoded)), encoded,
             struct.pack("<I", arr.ndim)]
    for d in arr.shape:
        parts.append(struct.pack("<Q", d))
    parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.offset = 0

    def take(self, n):
        if self.offset + n > len(self.blob):
            raise IntegrityError(
                f"checkpoint truncated at offset {self.offset} "
                f"(needed {n} more bytes)")
        chunk = self.blob[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]


def _collect(stack, epoch, valid_metric):
    meta = {
        "config": stack.config,
        "epoch": int(epoch),
        "valid_metric": None if valid_metric is None else float(valid_metric),
        "bn": [],
    }
    records = [(p.name, p.data) for p in stack.parameters()]
    for i, layer in enumerate(stack.bn_layers()):
        st, arrays = layer.state()
        st["layer"] = layer.name
        meta["bn"].append(st)
        for key in sorted(arrays):
            records.append((f"bnstat.{i}.{key}", arrays[key]))
    return meta, records


def save_checkpoint(stack, path, epoch=0, valid_metric=None):
    if stack.config is None:
        raise IntegrityError("stack has no config snapshot; build it via build_stack")
    meta, records = _collect(stack, epoch, valid_metric)
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    body = [MAGIC, struct.pack("<I", VERSION),
            struct.pack("<Q", len(header)), header,
            struct.pack("<Q", len(records))]
    for name, arr in records:
        body.append(_pack_record(name, arr))
    blob = b"".join(body)
    blob += struct.pack("<I", zlib.crc32(blob))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read_checkpoint(path):
    """Parse a checkpoint into (meta dict, name -> array). Verifies CRC."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise IntegrityError("checkpoint truncated at offset 0")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise IntegrityError(f"CRC mismatch at offset {len(blob) - 4}")
    r = _Reader(blob[:-4])
    if r.take(4) != MAGIC:
        raise IntegrityError("bad magic bytes at offset 0")
    version = r.u32()
    if version != VERSION:
        raise IntegrityError(f"unknown checkpoint version {version}")
    meta = json.loads(r.take(r.u64()).decode("utf-8"))
    n_records = r.u64()
    arrays = {}
    for _ in range(n_records):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = tuple(r.u64() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(count * 8), dtype="<f8").reshape(shape)
        arrays[name] = data.copy()
    return meta, arrays


def load_checkpoint(path):
    """Rebuild the model from a checkpoint; returns (stack, meta)."""
    meta, arrays = read_checkpoint(path)
    stack = build_stack(meta["config"])
    for p in stack.parameters():
        if p.name not in arrays:
            raise IntegrityError(f"checkpoint missing parameter {p.name}")
        if arrays[p.name].shape != p.data.shape:
            raise IntegrityError(
                f"parameter {p.name}: shape {arrays[p.name].shape} "
                f"!= expected {p.data.shape}")
        p.data[...] = arrays[p.name]
    for i, layer in enumerate(stack.bn_layers()):
        st = meta["bn"][i]
        prefix = f"bnstat.{i}."
        layer_arrays = {k[len(prefix):]: v for k, v in arrays.items()
                        if k.startswith(prefix)}
        layer.load_state(st, layer_arrays)
    return stack, meta
