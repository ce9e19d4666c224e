"""Round-trip and layout tests for the binary tensor dump."""

import struct

import numpy as np
import pytest

from partlens.tensorio import MAGIC, read_tensors, write_tensors


class TestRoundTrip:
    def test_values_shapes_and_order_survive(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "backbone.stage0.weight": rng.normal(size=(4, 3, 3, 3)),
            "dictionary.parts": rng.normal(size=(5, 16)),
            "scalar": np.array(3.25),
        }
        path = tmp_path / "dump.rgt"
        write_tensors(path, tensors)
        loaded = read_tensors(path)
        assert list(loaded) == list(tensors)
        for name in tensors:
            np.testing.assert_array_equal(loaded[name], tensors[name])
            assert loaded[name].dtype == np.float64

    def test_write_is_deterministic(self, tmp_path):
        tensors = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1.0])}
        p1, p2 = tmp_path / "one.rgt", tmp_path / "two.rgt"
        write_tensors(p1, tensors)
        write_tensors(p2, tensors)
        assert p1.read_bytes() == p2.read_bytes()


class TestLayout:
    def test_header_bytes(self, tmp_path):
        path = tmp_path / "dump.rgt"
        write_tensors(path, {"ab": np.array([1.0, 2.0])})
        blob = path.read_bytes()
        assert blob[:4] == MAGIC
        assert struct.unpack_from("<I", blob, 4)[0] == 1
        assert struct.unpack_from("<H", blob, 8)[0] == 2
        assert blob[10:12] == b"ab"
        assert blob[12] == 1  # rank
        assert struct.unpack_from("<I", blob, 13)[0] == 2
        assert struct.unpack_from("<2d", blob, 17) == (1.0, 2.0)
        assert len(blob) == 17 + 16

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.rgt"
        path.write_bytes(b"NOPE" + b"\x00" * 8)
        with pytest.raises(ValueError, match="bad magic"):
            read_tensors(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "dump.rgt"
        write_tensors(path, {"a": np.array([1.0])})
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ValueError, match="trailing"):
            read_tensors(path)
