"""Binary checkpoint persistence.

File layout, all integers little-endian:

    bytes 0-3    magic "FLYN"
    bytes 4-7    u32 format version (currently 1)
    bytes 8-15   u64 header length H
    16 .. 16+H   UTF-8 JSON header: network graph, train config, history,
                 Adam step count, and the tensor layout (ids, shapes,
                 byte offsets into each blob)
    then         three equally-sized raw blobs of little-endian float32:
                 parameters, Adam first moments, Adam second moments

Loading is strict: every structural problem raises its own error type so
callers can tell a foreign file from a damaged one. Saving goes through
a temp file in the target directory plus an atomic rename, so a crash
mid-write can never leave a half-written checkpoint at the destination.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .layers import LayerParams
from .network import NetworkSpec
from .optim import AdamState
from .training import Checkpoint, TrainConfig, TrainHistory

MAGIC = b"FLYN"
VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")   # magic, version, header length


class CheckpointError(Exception):
    """Base class for unreadable checkpoint files."""


class BadMagicError(CheckpointError):
    """The file does not start with the checkpoint magic bytes."""


class VersionError(CheckpointError):
    """The file uses an unsupported format version."""


class TruncatedError(CheckpointError):
    """The file ends before the data the header promises."""


class LengthMismatchError(CheckpointError):
    """The header's sizes and the file's actual size disagree."""


def _layout(spec: NetworkSpec, params: dict) -> tuple:
    """Tensor order and byte offsets for one blob; returns (entries, size)."""
    ids = [n.id for n in spec.param_nodes()]
    if set(ids) != set(params.keys()):
        raise ValueError(f"parameter set keys {sorted(params)} do not match "
                         f"the network's parameterized layers {sorted(ids)}")
    entries, offset = [], 0
    for nid in ids:
        p = params[nid]
        entry = {"id": nid,
                 "weights_shape": list(p.weights.shape),
                 "weights_offset": offset}
        offset += p.weights.size * 4
        entry["bias_shape"] = list(p.bias.shape)
        entry["bias_offset"] = offset
        offset += p.bias.size * 4
        entries.append(entry)
    return entries, offset


def _pack_blob(entries: list, tensors: dict, size: int) -> bytes:
    buf = bytearray(size)
    for e in entries:
        p = tensors[e["id"]]
        for key, arr in (("weights", p.weights), ("bias", p.bias)):
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            off = e[f"{key}_offset"]
            buf[off:off + len(raw)] = raw
    return bytes(buf)


def _unpack_blob(entries: list, data: bytes, base: int) -> dict:
    out = {}
    for e in entries:
        arrs = {}
        for key in ("weights", "bias"):
            shape = tuple(e[f"{key}_shape"])
            count = int(np.prod(shape)) if shape else 1
            arrs[key] = np.frombuffer(
                data, dtype="<f4", count=count,
                offset=base + e[f"{key}_offset"]).reshape(shape).copy()
        out[e["id"]] = LayerParams(arrs["weights"], arrs["bias"])
    return out


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Serialize a checkpoint; the write is atomic (temp file + rename)."""
    path = os.fspath(path)
    entries, blob_size = _layout(ckpt.spec, ckpt.params)
    header = {
        "network": ckpt.spec.to_dict(),
        "config": ckpt.config.to_dict(),
        "history": ckpt.history.to_dict(),
        "adam_t": ckpt.state.t,
        "layout": entries,
        "blob_bytes": blob_size,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join([
        _PREAMBLE.pack(MAGIC, VERSION, len(header_bytes)),
        header_bytes,
        _pack_blob(entries, ckpt.params, blob_size),
        _pack_blob(entries, ckpt.state.m, blob_size),
        _pack_blob(entries, ckpt.state.v, blob_size),
    ])
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(body)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint written by save_checkpoint, verifying structure."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint file (bad magic)")
    if len(data) < _PREAMBLE.size:
        raise TruncatedError(f"{path}: file ends inside the fixed preamble")
    _, version, header_len = _PREAMBLE.unpack_from(data)
    if version != VERSION:
        raise VersionError(f"{path}: format version {version} not supported "
                           f"(expected {VERSION})")
    header_end = _PREAMBLE.size + header_len
    if header_end > len(data):
        raise TruncatedError(f"{path}: header of {header_len} bytes extends "
                             f"past end of file")
    try:
        header = json.loads(data[_PREAMBLE.size:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc

    entries = header["layout"]
    offset = 0
    for e in entries:
        for key in ("weights", "bias"):
            if e[f"{key}_offset"] != offset:
                raise LengthMismatchError(
                    f"{path}: header offset for {e['id']}.{key} disagrees "
                    f"with the declared tensor shapes")
            offset += int(np.prod(e[f"{key}_shape"])) * 4
    if offset != header["blob_bytes"]:
        raise LengthMismatchError(
            f"{path}: header declares {header['blob_bytes']} blob bytes but "
            f"its shapes sum to {offset}")
    expected = header_end + 3 * offset
    if len(data) < expected:
        raise TruncatedError(f"{path}: truncated parameter blob (file has "
                             f"{len(data)} bytes, expected {expected})")
    if len(data) > expected:
        raise LengthMismatchError(f"{path}: file has {len(data)} bytes but "
                                  f"the header implies {expected}")

    spec = NetworkSpec.from_dict(header["network"])
    params = _unpack_blob(entries, data, header_end)
    state = AdamState(_unpack_blob(entries, data, header_end + offset),
                      _unpack_blob(entries, data, header_end + 2 * offset),
                      header["adam_t"])
    return Checkpoint(spec, params,
                      state,
                      TrainConfig.from_dict(header["config"]),
                      TrainHistory.from_dict(header["history"]))
