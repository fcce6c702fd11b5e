"""Binary tensor format and checkpoint container."""

import numpy as np
import pytest

from mvtf import tensorio
from mvtf.errors import FormatError


def test_header_layout(tmp_path, rng):
    arr = rng.standard_normal((3, 5)).astype(np.float64)
    path = tmp_path / "t.mvt"
    tensorio.save_tensor(path, arr)
    raw = path.read_bytes()
    assert raw[:4] == b"MVTF"
    assert raw[4:6] == (1).to_bytes(2, "little")     # version
    assert raw[6] == 1                               # dtype code: float64
    assert raw[7] == 2                               # rank
    assert int.from_bytes(raw[8:12], "little") == 3
    assert int.from_bytes(raw[12:16], "little") == 5


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_roundtrip_bit_identical(tmp_path, rng, dtype):
    arr = rng.standard_normal((50, 64)).astype(dtype)
    path = tmp_path / "emb.mvt"
    tensorio.save_tensor(path, arr)
    back = tensorio.load_tensor(path)
    assert back.dtype == dtype
    np.testing.assert_array_equal(back, arr)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.mvt"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(FormatError):
        tensorio.load_tensor(path)


def test_bad_version_rejected(tmp_path, rng):
    path = tmp_path / "v9.mvt"
    raw = bytearray(tensorio.tensor_bytes(rng.standard_normal(4)))
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        tensorio.load_tensor(path)


def test_truncated_payload_rejected(tmp_path, rng):
    raw = tensorio.tensor_bytes(rng.standard_normal((10, 10)))
    path = tmp_path / "cut.mvt"
    path.write_bytes(raw[:len(raw) - 7])
    with pytest.raises(FormatError):
        tensorio.load_tensor(path)


def test_checkpoint_roundtrip(tmp_path, rng):
    tensors = {
        "a.w": rng.standard_normal((4, 3)),
        "a.b": rng.standard_normal(3),
        "deep.block0.gamma": rng.standard_normal(7),
    }
    meta = {"hidden": 32, "strategy": "mvtf"}
    path = tmp_path / "model.ckpt"
    tensorio.save_checkpoint(path, tensors, meta)
    back, back_meta = tensorio.load_checkpoint(path)
    assert back_meta == meta
    assert set(back) == set(tensors)
    for name, arr in tensors.items():
        np.testing.assert_array_equal(back[name], arr)


def test_checkpoint_index_is_text(tmp_path, rng):
    path = tmp_path / "model.ckpt"
    tensorio.save_checkpoint(path, {"w": rng.standard_normal(2)}, {"k": 1})
    raw = path.read_bytes()
    index_offset = int.from_bytes(raw[:8], "little")
    index = raw[index_offset:].decode("utf-8")
    assert index.splitlines()[0].startswith("w ")
    assert "#meta" in index
