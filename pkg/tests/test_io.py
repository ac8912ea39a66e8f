import struct

import numpy as np
import pytest

from equiburst import FormatError
from equiburst.grid import GroupFeatureMap, Image
from equiburst.io import (
    meta_path,
    read_array,
    read_keyvalue,
    read_pfm,
    read_tensor,
    write_array,
    write_keyvalue,
    write_pfm,
    write_tensor,
)


def test_pfm_round_trip(tmp_path, rng):
    img = Image(rng.random((8, 8, 3)), 1 / 64)
    path = tmp_path / "x.pfm"
    write_pfm(path, img)
    back = read_pfm(path)
    assert back.shape == img.shape
    assert back.h == img.h
    assert np.array_equal(back.data, img.data.astype(np.float32).astype(np.float64))


def test_pfm_grayscale_round_trip(tmp_path, rng):
    img = Image(rng.random((5, 7, 1)), 0.25)
    write_pfm(tmp_path / "g.pfm", img)
    back = read_pfm(tmp_path / "g.pfm")
    assert back.shape == (5, 7, 1)
    assert np.allclose(back.data, img.data, atol=1e-7)


def test_pfm_handmade_file(tmp_path):
    vals = np.arange(12, dtype="<f4")
    path = tmp_path / "h.pfm"
    path.write_bytes(b"PF\n2 2\n-1.0\n" + vals.tobytes())
    img = read_pfm(path)
    assert img.shape == (2, 2, 3)
    assert img.h == 1.0
    # PFM stores rows bottom-to-top
    assert np.array_equal(img.data[1, 0], [0.0, 1.0, 2.0])
    assert np.array_equal(img.data[0, 1], [9.0, 10.0, 11.0])


def test_pfm_big_endian(tmp_path):
    path = tmp_path / "be.pfm"
    path.write_bytes(b"Pf\n1 1\n1.0\n" + struct.pack(">f", 0.5))
    assert read_pfm(path).data[0, 0, 0] == 0.5


def test_pfm_truncated_payload(tmp_path):
    path = tmp_path / "t.pfm"
    header = b"PF\n2 2\n-1.0\n"
    path.write_bytes(header + bytes(47))
    with pytest.raises(FormatError) as exc:
        read_pfm(path)
    assert exc.value.offset == len(header) + 47


@pytest.mark.parametrize("content", [b"P6\n2 2\n-1.0\n", b"PF\n2 x\n-1.0\n", b"PF\n2 2\n0\n", b"PF\n2"])
def test_pfm_bad_header(tmp_path, content):
    path = tmp_path / "b.pfm"
    path.write_bytes(content)
    with pytest.raises(FormatError) as exc:
        read_pfm(path)
    assert exc.value.offset is not None


def test_pfm_sidecar(tmp_path):
    img = Image(np.zeros((2, 2, 1)), 0.125)
    write_pfm(tmp_path / "s.pfm", img, origin=(1.0, -2.0))
    meta = read_keyvalue(meta_path(tmp_path / "s.pfm"))
    assert meta == {"mesh_size": "0.125", "origin": "1.0,-2.0"}


def test_tensor_round_trip_bit_exact(tmp_path, rng):
    fmap = GroupFeatureMap(rng.standard_normal((4, 4, 4, 2)), 1 / 3)
    write_tensor(tmp_path / "z.eqt", fmap)
    back = read_tensor(tmp_path / "z.eqt")
    assert back.h == fmap.h
    assert np.array_equal(back.data, fmap.data)


def test_tensor_handmade(tmp_path):
    path = tmp_path / "m.eqt"
    path.write_bytes(b"EQT1 2 2 1 1 0.5\n" + np.array([1.0, 2.0, 3.0, 4.0], dtype="<f8").tobytes())
    fmap = read_tensor(path)
    assert fmap.data.shape == (2, 2, 1, 1)
    assert fmap.h == 0.5
    assert np.array_equal(fmap.data[:, :, 0, 0], [[1.0, 2.0], [3.0, 4.0]])


@pytest.mark.parametrize("payload", [24, 40])
def test_tensor_length_mismatch(tmp_path, payload):
    path = tmp_path / "short.eqt"
    path.write_bytes(b"EQT1 2 2 1 1 0.5\n" + bytes(payload))
    with pytest.raises(FormatError):
        read_tensor(path)


def test_tensor_bad_magic(tmp_path):
    path = tmp_path / "bad.eqt"
    path.write_bytes(b"EQT2 1 1 1 1 1.0\n" + bytes(8))
    with pytest.raises(FormatError):
        read_array(path)


def test_array_round_trip(tmp_path, rng):
    data = rng.standard_normal((2, 3, 1, 5))
    write_array(tmp_path / "a.eqt", data, 0.1)
    back, h = read_array(tmp_path / "a.eqt")
    assert h == 0.1
    assert np.array_equal(back, data)


def test_keyvalue_round_trip(tmp_path):
    path = tmp_path / "kv.txt"
    write_keyvalue(path, {"a": 1, "b": 0.1, "c": (1.0, 2.5)})
    assert read_keyvalue(path) == {"a": "1", "b": "0.1", "c": "1.0,2.5"}


def test_keyvalue_error_names_line(tmp_path):
    path = tmp_path / "kv.txt"
    path.write_text("a=1\n# note\nbroken\n")
    with pytest.raises(FormatError, match="line 3") as exc:
        read_keyvalue(path)
    assert exc.value.line == 3
