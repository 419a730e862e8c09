"""Binary checkpoint format.

Layout (little-endian)::

    b"SSEG"  u32 version  32-byte model-spec hash
    u32 meta_len  meta (canonical JSON: config, epoch count, RNG state, layers)
    u32 n_tensors
    n_tensors x { u16 name_len  name  u8 rank  rank x u32 dim  u64 offset }
    u32 CRC-32(everything above)
    u64 payload_len  payload (raw float64)  u32 CRC-32(payload)

Both checksums together mean any single corrupted byte is reported.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .exceptions import (
    CheckpointFormatError,
    CheckpointIncompatibleError,
    CheckpointIntegrityError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from .loss_optim import OptimizerState
from .model_arch import LayerSpec, Model, spec_hash
from .tensor_core import ConvKernel

__all__ = ["Checkpoint", "MAGIC", "FORMAT_VERSION", "save_checkpoint", "load_checkpoint",
           "checkpoint_bytes", "checkpoint_from_bytes"]

MAGIC = b"SSEG"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: Model
    optimizer: OptimizerState
    config: TrainConfig
    epochs_completed: int = 0
    rng_state: dict = field(default_factory=dict)

    @property
    def spec_hash(self) -> bytes:
        return self.model.spec_hash


def _meta(ckpt: Checkpoint) -> bytes:
    m = ckpt.model
    doc = {
        "config": ckpt.config.to_dict(),
        "epochs_completed": ckpt.epochs_completed,
        "rng_state": ckpt.rng_state,
        "model": {
            "input_hw": list(m.input_hw),
            "in_channels": m.in_channels,
            "layers": [
                {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(s).items()}
                for s in m.specs
            ],
        },
        "optimizer": {"rho": ckpt.optimizer.rho, "eps": ckpt.optimizer.eps,
                      "lr_scale": ckpt.optimizer.lr_scale},
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def _tensors(ckpt: Checkpoint):
    out = []
    for i, p in enumerate(ckpt.model.params):
        out.append((f"param.{i}.weight", p.weights))
        out.append((f"param.{i}.bias", p.bias))
    for j, a in enumerate(ckpt.optimizer.acc_grad_sq):
        out.append((f"adadelta.acc_grad_sq.{j}", a))
    for j, a in enumerate(ckpt.optimizer.acc_update_sq):
        out.append((f"adadelta.acc_update_sq.{j}", a))
    return out


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    meta = _meta(ckpt)
    header = [MAGIC, struct.pack("<I", FORMAT_VERSION), ckpt.spec_hash,
              struct.pack("<I", len(meta)), meta]
    tensors = _tensors(ckpt)
    header.append(struct.pack("<I", len(tensors)))
    payload, offset = [], 0
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode()
        header.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        header.append(struct.pack(f"<{arr.ndim}I", *arr.shape) + struct.pack("<Q", offset))
        payload.append(arr.tobytes())
        offset += arr.nbytes
    body = b"".join(payload)
    head = b"".join(header)
    return head + struct.pack("<I", zlib.crc32(head)) + struct.pack("<Q", len(body)) + body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError("checkpoint file is truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_from_bytes(data: bytes, expected_spec_hash: bytes | None = None) -> Checkpoint:
    r = _Reader(data)
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    stored_hash = r.take(32)
    (meta_len,) = r.unpack("<I")
    meta_raw = r.take(meta_len)
    (count,) = r.unpack("<I")
    directory = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len)
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        (offset,) = r.unpack("<Q")
        directory.append((name, dims, offset))
    header_end = r.pos
    (header_crc,) = r.unpack("<I")
    if zlib.crc32(data[:header_end]) != header_crc:
        raise CheckpointIntegrityError("checkpoint header checksum mismatch")
    (payload_len,) = r.unpack("<Q")
    payload = r.take(payload_len)
    (crc,) = r.unpack("<I")
    if r.pos != len(data):
        raise CheckpointFormatError("unexpected bytes after checkpoint trailer")
    if zlib.crc32(payload) != crc:
        raise CheckpointIntegrityError("checkpoint payload checksum mismatch")

    try:
        meta = json.loads(meta_raw)
        directory = [(name.decode(), dims, offset) for name, dims, offset in directory]
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable checkpoint header: {exc}") from exc
    arrays = {}
    for name, dims, offset in directory:
        n = int(np.prod(dims, dtype=np.int64)) * 8
        if offset + n > payload_len:
            raise CheckpointFormatError(f"tensor {name!r} lies outside the payload")
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=n // 8, offset=offset).reshape(dims).astype(np.float64)

    try:
        mm = meta["model"]
        specs = [LayerSpec(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})
                 for d in mm["layers"]]
        input_hw, in_channels = tuple(mm["input_hw"]), mm["in_channels"]
        actual_hash = spec_hash(specs, input_hw, in_channels)
        if actual_hash != stored_hash:
            raise CheckpointIntegrityError("stored spec hash does not match the stored layer list")
        if expected_spec_hash is not None and stored_hash != expected_spec_hash:
            raise CheckpointIncompatibleError(
                "checkpoint was written for a different model architecture "
                f"(spec hash {stored_hash.hex()[:12]}, expected {expected_spec_hash.hex()[:12]})"
            )
        n_conv = sum(1 for s in specs if s.kind == "conv")
        params = [ConvKernel(arrays[f"param.{i}.weight"], arrays[f"param.{i}.bias"]) for i in range(n_conv)]
        model = Model(specs, params, input_hw, in_channels)
        n_state = 2 * n_conv
        om = meta["optimizer"]
        opt = OptimizerState(
            [arrays[f"adadelta.acc_grad_sq.{j}"] for j in range(n_state)],
            [arrays[f"adadelta.acc_update_sq.{j}"] for j in range(n_state)],
            om["rho"], om["eps"], om["lr_scale"],
        )
        config = TrainConfig.from_dict(meta["config"])
        return Checkpoint(model, opt, config, meta["epochs_completed"], meta["rng_state"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"inconsistent checkpoint contents: {exc}") from exc


def save_checkpoint(path, ckpt: Checkpoint):
    """Write atomically: the previous file survives any failure mid-write."""
    data = checkpoint_bytes(ckpt)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, expected_spec_hash: bytes | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read(), expected_spec_hash)
