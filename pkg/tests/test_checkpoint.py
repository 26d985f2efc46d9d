"""Checkpoint container tests: byte determinism, full round trips, and
corruption diagnostics with byte offsets."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from fuseseg.checkpoint import MAGIC, VERSION, load_checkpoint, save_checkpoint
from fuseseg.exceptions import CheckpointError


def _tensors(rng):
    return {
        "decoder.head.weight": rng.normal(size=(1, 8, 3, 3)),
        "fusion.theta": rng.normal(size=8),
        "scalar": np.array(3.5),
        "encoder.pos_embed": rng.normal(size=(4, 8)),
    }


def test_round_trip_preserves_values_and_metadata(tmp_path, rng):
    path = str(tmp_path / "a.ckpt")
    tensors = _tensors(rng)
    meta = {"kind": "best", "epoch": "7", "val_dice": repr(0.91)}
    save_checkpoint(path, tensors, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert np.array_equal(loaded[name],
                              np.asarray(tensors[name], dtype=np.float64))
        assert loaded[name].shape == np.asarray(tensors[name]).shape


def test_saving_twice_is_byte_identical(tmp_path, rng):
    tensors = _tensors(rng)
    a, b = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
    save_checkpoint(a, tensors, {"z": "1", "a": "2"})
    save_checkpoint(b, dict(reversed(list(tensors.items()))), {"a": "2", "z": "1"})
    assert open(a, "rb").read() == open(b, "rb").read()


def test_empty_metadata_and_no_tensors(tmp_path):
    path = str(tmp_path / "empty.ckpt")
    save_checkpoint(path, {})
    tensors, meta = load_checkpoint(path)
    assert tensors == {} and meta == {}


def test_header_layout_is_as_documented(tmp_path):
    path = str(tmp_path / "h.ckpt")
    save_checkpoint(path, {"x": np.zeros(2)}, {"k": "v"})
    blob = open(path, "rb").read()
    assert blob[:4] == MAGIC
    assert struct.unpack("<I", blob[4:8])[0] == VERSION
    meta_len = struct.unpack("<I", blob[8:12])[0]
    assert blob[12:12 + meta_len] == b"k=v"


def test_metadata_validation(tmp_path, rng):
    path = str(tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError):
        save_checkpoint(path, {}, {"bad=key": "v"})
    with pytest.raises(CheckpointError):
        save_checkpoint(path, {}, {"k": "line\nbreak"})
    with pytest.raises(CheckpointError):
        save_checkpoint(path, {}, {"": "v"})


def test_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(str(path))


def test_rejects_unsupported_version(tmp_path):
    path = tmp_path / "v9.ckpt"
    path.write_bytes(MAGIC + struct.pack("<I", 9) + struct.pack("<II", 0, 0))
    with pytest.raises(CheckpointError, match="version 9"):
        load_checkpoint(str(path))


def test_truncation_reports_offset_and_context(tmp_path, rng):
    path = str(tmp_path / "t.ckpt")
    save_checkpoint(path, _tensors(rng), {"kind": "last"})
    blob = open(path, "rb").read()
    short = tmp_path / "short.ckpt"
    short.write_bytes(blob[:len(blob) - 9])
    with pytest.raises(CheckpointError, match=r"truncated while reading .* at byte"):
        load_checkpoint(str(short))
    tiny = tmp_path / "tiny.ckpt"
    tiny.write_bytes(blob[:2])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(str(tiny))


def test_trailing_bytes_rejected(tmp_path, rng):
    path = str(tmp_path / "x.ckpt")
    save_checkpoint(path, {"a": rng.normal(size=3)})
    blob = open(path, "rb").read()
    padded = tmp_path / "padded.ckpt"
    padded.write_bytes(blob + b"\x00\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(str(padded))


def test_duplicate_tensor_rejected(tmp_path):
    entry = (struct.pack("<H", 1) + b"a" + struct.pack("<B", 1)
             + struct.pack("<I", 1) + struct.pack("<d", 1.0))
    blob = (MAGIC + struct.pack("<I", VERSION) + struct.pack("<I", 0)
            + struct.pack("<I", 2) + entry + entry)
    path = tmp_path / "dup.ckpt"
    path.write_bytes(blob)
    with pytest.raises(CheckpointError, match="duplicate"):
        load_checkpoint(str(path))


def test_scalar_and_empty_tensors_round_trip(tmp_path):
    path = str(tmp_path / "s.ckpt")
    save_checkpoint(path, {"s": np.array(2.5), "e": np.zeros((0, 3))})
    tensors, _ = load_checkpoint(path)
    assert tensors["s"].shape == () and tensors["s"] == 2.5
    assert tensors["e"].shape == (0, 3)


def test_non_contiguous_and_non_float_inputs(tmp_path):
    path = str(tmp_path / "c.ckpt")
    base = np.arange(12, dtype=np.int32).reshape(3, 4)
    save_checkpoint(path, {"strided": base[:, ::2]})
    tensors, _ = load_checkpoint(path)
    assert tensors["strided"].dtype == np.float64
    assert np.array_equal(tensors["strided"], base[:, ::2].astype(float))


def test_overlong_name_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="name too long"):
        save_checkpoint(str(tmp_path / "n.ckpt"), {"x" * 70000: np.zeros(1)})
