import struct
import zlib

import numpy as np
import pytest

from saltseg.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    checkpoint_bytes,
    checkpoint_from_bytes,
    load_checkpoint,
    save_checkpoint,
)
from saltseg.config import TrainConfig
from saltseg.exceptions import (
    CheckpointError,
    CheckpointFormatError,
    CheckpointIncompatibleError,
    CheckpointIntegrityError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from saltseg.model_arch import spec_hash, table1_specs
from saltseg.training import fresh_checkpoint


@pytest.fixture
def ckpt():
    c = fresh_checkpoint(TrainConfig(epochs=3, seed=5))
    rng = np.random.default_rng(0)
    for a in c.optimizer.acc_grad_sq + c.optimizer.acc_update_sq:
        a[...] = rng.random(a.shape)
    c.epochs_completed = 2
    c.rng_state["next_epoch"] = 2
    return c


def test_header_layout(ckpt):
    data = checkpoint_bytes(ckpt)
    assert data[:4] == MAGIC == b"SSEG"
    assert struct.unpack("<I", data[4:8])[0] == FORMAT_VERSION
    assert data[8:40] == spec_hash(table1_specs())
    body_len = sum(p.weights.size + p.bias.size for p in ckpt.model.params) * 8 * 3
    (stored_len,) = struct.unpack("<Q", data[-(4 + body_len + 8) : -(4 + body_len)])
    assert stored_len == body_len
    body = data[-(4 + body_len) : -4]
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(body)
    w0 = ckpt.model.params[0].weights
    np.testing.assert_array_equal(np.frombuffer(body[: w0.nbytes], "<f8").reshape(w0.shape), w0)


def test_roundtrip_restores_everything(ckpt):
    back = checkpoint_from_bytes(checkpoint_bytes(ckpt))
    assert back.config == ckpt.config
    assert back.epochs_completed == 2 and back.rng_state == ckpt.rng_state
    for a, b in zip(ckpt.model.flat_params(), back.model.flat_params()):
        assert a.tobytes() == b.tobytes()
    for a, b in zip(ckpt.optimizer.acc_update_sq, back.optimizer.acc_update_sq):
        assert a.tobytes() == b.tobytes()
    assert (back.optimizer.rho, back.optimizer.eps, back.optimizer.lr_scale) == (0.95, 1e-6, 0.01)


def test_save_load_save_is_byte_identical(tmp_path, ckpt):
    save_checkpoint(tmp_path / "a.ckpt", ckpt)
    save_checkpoint(tmp_path / "b.ckpt", load_checkpoint(tmp_path / "a.ckpt"))
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_save_leaves_no_temp_files(tmp_path, ckpt):
    save_checkpoint(tmp_path / "a.ckpt", ckpt)
    save_checkpoint(tmp_path / "a.ckpt", ckpt)
    assert [p.name for p in tmp_path.iterdir()] == ["a.ckpt"]


def test_bad_magic(ckpt):
    with pytest.raises(CheckpointFormatError):
        checkpoint_from_bytes(b"XSEG" + checkpoint_bytes(ckpt)[4:])


def test_bad_version(ckpt):
    data = checkpoint_bytes(ckpt)
    with pytest.raises(CheckpointVersionError):
        checkpoint_from_bytes(data[:4] + struct.pack("<I", 99) + data[8:])


@pytest.mark.parametrize("keep", [0, 3, 10, 100, -1])
def test_truncation(ckpt, keep):
    data = checkpoint_bytes(ckpt)
    with pytest.raises((CheckpointTruncatedError, CheckpointFormatError)):
        checkpoint_from_bytes(data[:keep])


def test_truncated_tail_is_specific(ckpt):
    with pytest.raises(CheckpointTruncatedError):
        checkpoint_from_bytes(checkpoint_bytes(ckpt)[:-1])


def test_trailing_bytes(ckpt):
    with pytest.raises(CheckpointFormatError):
        checkpoint_from_bytes(checkpoint_bytes(ckpt) + b"\x00")


def test_payload_corruption_fails_checksum(ckpt):
    data = bytearray(checkpoint_bytes(ckpt))
    data[-20] ^= 0x01
    with pytest.raises(CheckpointIntegrityError):
        checkpoint_from_bytes(bytes(data))


def test_single_byte_corruption_detected(ckpt):
    data = checkpoint_bytes(ckpt)
    body_len = sum(p.weights.size + p.bias.size for p in ckpt.model.params) * 8 * 3
    header_len = len(data) - body_len - 4
    # every header byte, every trailer byte, and a stride through the payload
    positions = [*range(header_len), *range(header_len, len(data) - 4, 997), *range(len(data) - 4, len(data))]
    for pos in positions:
        bad = bytearray(data)
        bad[pos] ^= 0xA5
        with pytest.raises(CheckpointError):
            checkpoint_from_bytes(bytes(bad))


def test_incompatible_architecture(ckpt):
    with pytest.raises(CheckpointIncompatibleError):
        checkpoint_from_bytes(checkpoint_bytes(ckpt), spec_hash(table1_specs(True)))
    checkpoint_from_bytes(checkpoint_bytes(ckpt), spec_hash(table1_specs()))


def test_error_distinct_classes():
    classes = {CheckpointFormatError, CheckpointVersionError, CheckpointTruncatedError,
               CheckpointIntegrityError, CheckpointIncompatibleError}
    assert len(classes) == 5 and all(c.exit_code == 4 for c in classes)
