"""Binary tensor record format: bit-exact round trips and corruption handling."""

import io

import numpy as np
import pytest

from crossfuse.errors import FormatError
from crossfuse.tensor_io import load_tensor, read_tensor, save_tensor, write_tensor


@pytest.mark.parametrize("shape", [(), (1,), (5,), (3, 4), (2, 3, 4, 5)])
def test_roundtrip_bit_exact(tmp_path, shape):
    rng = np.random.default_rng(3)
    arr = rng.standard_normal(shape).astype(np.float32)
    path = tmp_path / "t.cftn"
    save_tensor(path, arr)
    back = load_tensor(path)
    assert back.dtype == np.float32
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_special_values_survive(tmp_path):
    arr = np.array([0.0, -0.0, 1e-40, np.float32(2**-149), 3.4e38], dtype=np.float32)
    path = tmp_path / "t.cftn"
    save_tensor(path, arr)
    assert load_tensor(path).tobytes() == arr.tobytes()


def test_rejects_non_float32():
    with pytest.raises(FormatError, match="float32"):
        write_tensor(io.BytesIO(), np.zeros(3, dtype=np.float64))


def test_bad_magic_names_source(tmp_path):
    path = tmp_path / "bad.cftn"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError, match="bad.cftn"):
        load_tensor(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.cftn"
    save_tensor(path, np.ones((4, 4), dtype=np.float32))
    blob = path.read_bytes()
    path.write_bytes(blob[:-7])
    with pytest.raises(FormatError, match="truncated"):
        load_tensor(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.cftn"
    save_tensor(path, np.ones(3, dtype=np.float32))
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(FormatError, match="trailing"):
        load_tensor(path)


def test_unsupported_version():
    buf = io.BytesIO()
    write_tensor(buf, np.ones(2, dtype=np.float32))
    raw = bytearray(buf.getvalue())
    raw[4] = 9
    with pytest.raises(FormatError, match="version"):
        read_tensor(io.BytesIO(bytes(raw)))


def test_unsupported_dtype_code():
    buf = io.BytesIO()
    write_tensor(buf, np.ones(2, dtype=np.float32))
    raw = bytearray(buf.getvalue())
    raw[5] = 7
    with pytest.raises(FormatError, match="dtype"):
        read_tensor(io.BytesIO(bytes(raw)))


def test_atomic_write_leaves_no_temp(tmp_path):
    path = tmp_path / "t.cftn"
    save_tensor(path, np.ones(3, dtype=np.float32))
    assert [p.name for p in tmp_path.iterdir()] == ["t.cftn"]
