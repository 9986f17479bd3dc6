"""Binary checkpoint format.

Layout (little-endian)::

    b"SQCA" | u32 version | u32 n | n bytes of UTF-8 JSON header
    | float32 payload, tensors in declared order | u32 CRC-32 of all preceding bytes
"""
from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .errors import (
    CheckpointChecksumError,
    CheckpointConfigMismatchError,
    CheckpointError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from .masks import ClassSet
from .model import ArchitectureConfig, AutoencoderModel, Checkpoint

MAGIC = b"SQCA"
VERSION = 1
SUPPORTED_VERSIONS = (1,)


def _atomic_write(path, data: bytes):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def dumps(ckpt: Checkpoint) -> bytes:
    names = list(ckpt.arrays)
    header = {
        "architecture": ckpt.config.to_dict(),
        "classes": list(ckpt.classes.names),
        "best_val_loss": ckpt.best_val_loss,
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "tensors": [[n, list(ckpt.arrays[n].shape)] for n in names],
        "parameter_count": int(sum(ckpt.arrays[n].size for n in names)),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(ckpt.arrays[n], dtype="<f4").tobytes() for n in names)
    body = MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + payload
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads(data: bytes, expected_config: ArchitectureConfig | None = None) -> Checkpoint:
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointMagicError("not a segqc checkpoint (bad magic bytes)")
    if len(data) < 12:
        raise CheckpointTruncatedError("checkpoint header is truncated")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version not in SUPPORTED_VERSIONS:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    if len(data) < 12 + hlen:
        raise CheckpointTruncatedError("checkpoint JSON header is truncated")
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint header is not valid JSON: {exc}") from None
    count = int(header["parameter_count"])
    end = 12 + hlen + 4 * count
    if len(data) < end + 4:
        raise CheckpointTruncatedError(
            f"checkpoint payload is truncated: expected {end + 4} bytes, found {len(data)}"
        )
    (crc,) = struct.unpack_from("<I", data, end)
    if crc != zlib.crc32(data[:end]) & 0xFFFFFFFF:
        raise CheckpointChecksumError("checkpoint CRC-32 mismatch")

    config = ArchitectureConfig.from_dict(header["architecture"])
    classes = ClassSet(tuple(header["classes"]))
    if expected_config is not None and config != expected_config:
        raise CheckpointConfigMismatchError(
            f"checkpoint architecture {config} does not match the expected {expected_config}"
        )
    reference = AutoencoderModel(config, classes)
    expected = reference.state_arrays()
    if sum(a.size for _, a in expected) != count:
        raise CheckpointConfigMismatchError(
            f"checkpoint holds {count} values, architecture needs "
            f"{sum(a.size for _, a in expected)}"
        )
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=12 + hlen)
    stored = {}
    pos = 0
    for name, shape in header["tensors"]:
        size = int(np.prod(shape, dtype=np.int64))
        stored[name] = flat[pos : pos + size].reshape(shape)
        pos += size
    arrays = {}
    for name, ref in expected:
        got = stored.get(name)
        if got is None or got.shape != ref.shape:
            raise CheckpointConfigMismatchError(
                f"tensor {name}: expected shape {ref.shape}, got {None if got is None else got.shape}"
            )
        arrays[name] = got.astype(np.float32)
    return Checkpoint(config, arrays, float(header["best_val_loss"]), int(header["epoch"]),
                      int(header["seed"]), classes, version)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    _atomic_write(path, dumps(ckpt))


def load_checkpoint(path, expected_config: ArchitectureConfig | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read(), expected_config)
