"""Binary checkpoint format: round trips, header validation, corruption errors."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from seqrec.checkpoint import MAGIC, VERSION, CheckpointError, load_checkpoint, save_checkpoint
from seqrec.encoder import EncoderConfig, init_params


def make_params(seed=3, **kw):
    defaults = dict(n_items=9, hidden_size=8, num_blocks=2, num_heads=2, max_len=5, dropout=0.2)
    defaults.update(kw)
    cfg = EncoderConfig(**defaults)
    params = init_params(cfg, np.random.default_rng(seed))
    # make the zero-initialized tensors distinctive so copies are observable
    params.q_head.data += np.random.default_rng(seed + 1).normal(size=params.q_head.shape)
    params.q_bias.data += 0.5
    return params


def test_round_trip_is_bit_exact(tmp_path):
    params = make_params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    assert loaded.config == params.config
    for (name, a), (name2, b) in zip(params.named_tensors(), loaded.named_tensors()):
        assert name == name2
        assert np.array_equal(a.data, b.data), name


def test_save_is_deterministic(tmp_path):
    params = make_params()
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, params)
    save_checkpoint(p2, params)
    assert p1.read_bytes() == p2.read_bytes()


def test_header_layout(tmp_path):
    params = make_params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    version, n_items, hidden, blocks, heads, max_len = struct.unpack_from("<IIIIII", raw, 4)
    (dropout,) = struct.unpack_from("<d", raw, 28)
    (count,) = struct.unpack_from("<I", raw, 36)
    assert version == VERSION
    assert (n_items, hidden, blocks, heads, max_len) == (9, 8, 2, 2, 5)
    assert dropout == 0.2
    assert count == len(params.named_tensors())


def test_bad_magic_rejected(tmp_path):
    params = make_params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_bad_version_rejected(tmp_path):
    params = make_params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 4, 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    params = make_params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 16])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    params = make_params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    path.write_bytes(path.read_bytes() + b"\x00" * 8)
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_missing_file_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_corrupt_array_name_rejected(tmp_path):
    params = make_params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    raw = bytearray(path.read_bytes())
    # first array record starts at offset 40: u16 name length, then the name
    (name_len,) = struct.unpack_from("<H", raw, 40)
    raw[42 : 42 + name_len] = b"x" * name_len
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_configs_survive_round_trip_across_shapes(tmp_path):
    for kw in (dict(num_blocks=1, num_heads=1), dict(hidden_size=4, max_len=3)):
        params = make_params(**kw)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params)
        assert load_checkpoint(path).config == params.config
