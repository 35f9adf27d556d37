import struct

import numpy as np
import pytest

from gesturestyle.container import ContainerError, read_archive, read_matrices, write_archive, write_matrices


def test_segment_layout_is_little_endian_f32(tmp_path):
    mats = [np.arange(6, dtype=np.float32).reshape(2, 3), np.ones((2, 1)), np.zeros((2, 2)),
            np.full((2, 1), -1.5), np.array([[0.0, 1.0]])]
    path = tmp_path / "x.tsty"
    write_matrices(path, mats)
    buf = path.read_bytes()
    assert buf[:4] == b"TSTY"
    assert struct.unpack_from("<I", buf, 4) == (1,)
    assert struct.unpack_from("<10I", buf, 8) == (2, 3, 2, 1, 2, 2, 2, 1, 1, 2)
    assert struct.unpack_from("<6f", buf, 48) == (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)
    back = read_matrices(path)
    for a, b in zip(mats, back):
        np.testing.assert_array_equal(np.asarray(a, dtype=np.float32), b)


def test_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "x.tsty"
    write_matrices(path, [np.ones((3, 3))] * 5)
    buf = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXX" + buf[4:])
    with pytest.raises(ContainerError, match="magic"):
        read_matrices(tmp_path / "bad")
    (tmp_path / "short").write_bytes(buf[:-4])
    with pytest.raises(ContainerError, match="truncated"):
        read_matrices(tmp_path / "short")


def test_segment_needs_five_matrices(tmp_path):
    with pytest.raises(ContainerError):
        write_matrices(tmp_path / "x", [np.ones((1, 1))] * 4)


@pytest.mark.parametrize("itemsize", [4, 8])
def test_archive_roundtrip(tmp_path, itemsize):
    rng = np.random.default_rng(0)
    arrays = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=4), "s": np.array(2.5), "t": rng.normal(size=(2, 2, 2))}
    write_archive(tmp_path / "a", {"hello": [1, 2]}, arrays, itemsize=itemsize)
    header, back = read_archive(tmp_path / "a")
    assert header == {"hello": [1, 2]}
    dt = np.float32 if itemsize == 4 else np.float64
    for k, v in arrays.items():
        assert back[k].shape == np.shape(v)
        np.testing.assert_array_equal(back[k], np.asarray(v, dtype=dt))
