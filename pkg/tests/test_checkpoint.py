"""ParameterStore semantics and binary checkpoint round trips."""

import struct

import numpy as np
import pytest

from jdx.numerics.checkpoint import (MAGIC, ParameterStore, load_checkpoint,
                                     save_checkpoint)
from jdx.rng import Rng


def _store():
    r = Rng(31)
    store = ParameterStore()
    store.add("enc/c1.w", r.normal(shape=(4, 1, 3, 3)))
    store.add("enc/c1.b", np.zeros(4))
    store.add("head.w", r.normal(shape=(4, 2)))
    store.add("vcon/embed", r.normal(shape=(7, 3)))
    return store


def test_store_ordering_and_lookup():
    store = _store()
    assert list(store.keys()) == ["enc/c1.w", "enc/c1.b", "head.w", "vcon/embed"]
    assert store["head.w"].requires_grad
    assert "head.w" in store and "missing" not in store
    assert len(store) == 4
    with pytest.raises(ValueError):
        store.add("head.w", np.zeros(1))


def test_subset_and_state_bytes():
    store = _store()
    sub = store.subset("enc/")
    assert list(sub) == ["enc/c1.w", "enc/c1.b"]
    # state_bytes reflects current values, so mutating a parameter changes it.
    before = store.state_bytes("enc/")
    store["enc/c1.b"].data[0] = 5.0
    assert store.state_bytes("enc/") != before
    assert store.state_bytes("head.") == store["head.w"].data.tobytes()


def test_roundtrip_preserves_values_order_and_shapes(tmp_path):
    store = _store()
    path = tmp_path / "model.jdx"
    save_checkpoint(path, store)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(store.keys())
    for name, arr in loaded.items():
        assert arr.shape == store[name].data.shape
        assert np.array_equal(arr, store[name].data)


def test_save_is_deterministic_bytes(tmp_path):
    store = _store()
    p1, p2 = tmp_path / "a.jdx", tmp_path / "b.jdx"
    save_checkpoint(p1, store)
    save_checkpoint(p2, store)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_values_back_into_store(tmp_path):
    store = _store()
    path = tmp_path / "model.jdx"
    save_checkpoint(path, store)
    store["head.w"].data[...] = 0.0
    store.load_values(load_checkpoint(path))
    assert not np.all(store["head.w"].data == 0.0)


def test_load_values_validates_names_and_shapes():
    store = _store()
    with pytest.raises(KeyError):
        store.load_values({"nope": np.zeros(1)})
    with pytest.raises(ValueError):
        store.load_values({"head.w": np.zeros((3, 3))})


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.jdx"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_truncated_payload_rejected(tmp_path):
    store = _store()
    path = tmp_path / "model.jdx"
    save_checkpoint(path, store)
    clipped = tmp_path / "clipped.jdx"
    clipped.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(clipped)


def test_scalar_rank_zero_parameter_roundtrip(tmp_path):
    store = ParameterStore()
    store.add("alpha", np.asarray(2.0))
    path = tmp_path / "s.jdx"
    save_checkpoint(path, store)
    loaded = load_checkpoint(path)
    assert loaded["alpha"].shape == store["alpha"].data.shape
    assert float(loaded["alpha"].reshape(-1)[0]) == 2.0


def test_file_layout_matches_documented_format(tmp_path):
    store = ParameterStore()
    store.add("w", np.array([[1.0, 2.0]]))
    path = tmp_path / "w.jdx"
    save_checkpoint(path, store)
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    nlen = struct.unpack("<I", raw[4:8])[0]
    assert raw[8:8 + nlen] == b"w"
    rank = struct.unpack("<I", raw[9:13])[0]
    assert rank == 2
    extents = struct.unpack("<II", raw[13:21])
    assert extents == (1, 2)
    assert np.frombuffer(raw[21:], dtype="<f8").tolist() == [1.0, 2.0]
