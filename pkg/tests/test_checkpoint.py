"""Checkpoint container: round trips, byte stability, corruption detection."""

import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from i2idiff.pipeline.checkpoint import (FORMAT_VERSION, MAGIC,
                                         load_checkpoint, save_checkpoint)


def _sample_arrays(rng):
    return {
        "weights": rng.standard_normal((3, 4)).astype(np.float32),
        "bias": rng.standard_normal(7),
        "step": np.array(42, dtype=np.int64),
        "flags": np.array([True, False, True]),
    }


def test_round_trip(tmp_path, rng):
    arrays = _sample_arrays(rng)
    meta = {"lr": 1e-4, "name": "demo", "nested": {"a": [1, 2]}}
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, arrays, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert set(loaded) == set(arrays)
    for name in arrays:
        assert loaded[name].dtype == arrays[name].dtype
        assert loaded[name].shape == arrays[name].shape
        assert np.array_equal(loaded[name], arrays[name])


def test_save_of_load_is_byte_identical(tmp_path, rng):
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, _sample_arrays(rng), {"k": 1})
    arrays, meta = load_checkpoint(p1)
    save_checkpoint(p2, arrays, meta)
    assert p1.read_bytes() == p2.read_bytes()


def test_key_order_does_not_change_bytes(tmp_path, rng):
    a = rng.standard_normal(3)
    b = rng.standard_normal(2)
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, {"x": a, "y": b}, {"m": 1, "n": 2})
    save_checkpoint(p2, {"y": b, "x": a}, {"n": 2, "m": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_non_contiguous_input(tmp_path, rng):
    arr = rng.standard_normal((6, 6))[::2, 1::2]
    assert not arr.flags["C_CONTIGUOUS"]
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, {"arr": arr}, {})
    loaded, _ = load_checkpoint(path)
    assert np.array_equal(loaded["arr"], arr)


def test_crc_detects_corruption(tmp_path, rng):
    path = tmp_path / "d.ckpt"
    save_checkpoint(path, _sample_arrays(rng), {})
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="CRC mismatch"):
        load_checkpoint(path)


def test_bad_magic(tmp_path, rng):
    path = tmp_path / "e.ckpt"
    save_checkpoint(path, {"x": rng.standard_normal(2)}, {})
    data = bytearray(path.read_bytes())
    data[:4] = b"WHAT"
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(path)


def test_truncated_file(tmp_path):
    path = tmp_path / "f.ckpt"
    path.write_bytes(MAGIC + b"\x01")
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(path)


def test_unsupported_version(tmp_path, rng):
    path = tmp_path / "g.ckpt"
    save_checkpoint(path, {"x": rng.standard_normal(2)}, {})
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", FORMAT_VERSION + 1)
    body = bytes(data[:-4])
    import zlib
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(ValueError, match="unsupported format version"):
        load_checkpoint(path)


def test_empty_arrays_and_meta(tmp_path):
    path = tmp_path / "h.ckpt"
    save_checkpoint(path, {}, {})
    arrays, meta = load_checkpoint(path)
    assert arrays == {} and meta == {}


@settings(max_examples=40, deadline=None,
          suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    arr=hnp.arrays(
        dtype=st.sampled_from([np.float32, np.float64, np.int32, np.int64,
                               np.uint8, np.bool_]),
        shape=hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
        elements=st.integers(min_value=0, max_value=1),
    ),
    name=st.text(alphabet="abcxyz_/.", min_size=1, max_size=12),
    meta_val=st.one_of(st.integers(), st.floats(allow_nan=False,
                                                allow_infinity=False),
                       st.text(max_size=8), st.none()),
)
def test_round_trip_property(tmp_path, arr, name, meta_val):
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, {name: arr}, {"v": meta_val})
    loaded, meta = load_checkpoint(path)
    assert meta == {"v": meta_val}
    assert loaded[name].dtype == arr.dtype
    assert loaded[name].shape == arr.shape
    assert np.array_equal(loaded[name], arr)
    again = tmp_path / "q.ckpt"
    save_checkpoint(again, loaded, meta)
    assert again.read_bytes() == path.read_bytes()
