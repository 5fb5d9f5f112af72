"""Checkpoint binary format: roundtrip, determinism, corruption errors."""

import struct

import numpy as np
import pytest

from flynet.checkpoint import (MAGIC, VERSION, BadMagicError, CheckpointError,
                               LengthMismatchError, TruncatedError,
                               VersionError, load_checkpoint, save_checkpoint)
from flynet.optim import AdamHyper
from flynet.training import TrainConfig, train


@pytest.fixture(scope="module")
def trained(tiny_corpus):
    config = TrainConfig(arch="flynet", base_width=2, input_size=32,
                         batch_size=4, adam=AdamHyper(lr=3e-3), max_epochs=2,
                         patience=5, min_delta=0.001, seed=0, augment=False)
    ckpt, _ = train(config, tiny_corpus[:2], tiny_corpus[2:3])
    return ckpt


def test_roundtrip_restores_everything(trained, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(trained, path)
    loaded = load_checkpoint(path)
    assert loaded == trained
    assert loaded.config == trained.config
    assert loaded.spec.to_dict() == trained.spec.to_dict()
    assert loaded.history.to_dict() == trained.history.to_dict()
    for name in trained.params:
        assert np.array_equal(loaded.params[name].weights,
                              trained.params[name].weights)
        assert np.array_equal(loaded.params[name].bias,
                              trained.params[name].bias)
    for name in trained.state.m:
        assert np.array_equal(loaded.state.m[name].weights,
                              trained.state.m[name].weights)
        assert np.array_equal(loaded.state.v[name].bias,
                              trained.state.v[name].bias)
    assert loaded.state.t == trained.state.t


def test_repeated_saves_are_byte_identical(trained, tmp_path):
    save_checkpoint(trained, tmp_path / "a.ckpt")
    save_checkpoint(trained, tmp_path / "b.ckpt")
    save_checkpoint(load_checkpoint(tmp_path / "a.ckpt"), tmp_path / "c.ckpt")
    a = (tmp_path / "a.ckpt").read_bytes()
    assert a == (tmp_path / "b.ckpt").read_bytes()
    assert a == (tmp_path / "c.ckpt").read_bytes()


def test_header_layout(trained, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(trained, path)
    raw = path.read_bytes()
    assert raw[:4] == MAGIC == b"FLYN"
    version, header_len = struct.unpack("<IQ", raw[4:16])
    assert version == VERSION == 1
    assert 0 < header_len < len(raw)


def test_bad_magic_is_distinct_error(trained, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(trained, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"JUNK"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        load_checkpoint(path)


def test_unknown_version_is_distinct_error(trained, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(trained, path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionError, match="99"):
        load_checkpoint(path)


def test_truncated_file_is_distinct_error(trained, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(trained, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(TruncatedError):
        load_checkpoint(path)
    path.write_bytes(raw[:10])  # cut inside the fixed header
    with pytest.raises(TruncatedError):
        load_checkpoint(path)
    # an empty file fails the magic check, not the length check
    (tmp_path / "empty.ckpt").write_bytes(b"")
    with pytest.raises(BadMagicError):
        load_checkpoint(tmp_path / "empty.ckpt")


def test_trailing_garbage_is_distinct_error(trained, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(trained, path)
    path.write_bytes(path.read_bytes() + b"\x00" * 8)
    with pytest.raises(LengthMismatchError):
        load_checkpoint(path)


def test_all_corruption_errors_share_a_base(trained, tmp_path):
    for exc in (BadMagicError, VersionError, TruncatedError,
                LengthMismatchError):
        assert issubclass(exc, CheckpointError)
    assert issubclass(CheckpointError, Exception)
    # and the four are mutually distinct
    kinds = {BadMagicError, VersionError, TruncatedError, LengthMismatchError}
    assert len(kinds) == 4


def test_failed_save_leaves_no_partial_file(trained, tmp_path):
    target = tmp_path / "no_such_dir" / "m.ckpt"
    with pytest.raises(OSError):
        save_checkpoint(trained, target)
    assert not target.exists()
    assert list(tmp_path.iterdir()) == []  # no stray temp files either
