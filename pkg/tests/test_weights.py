import struct
import zlib

import numpy as np
import pytest

from v2tex.v2 import init_params
from v2tex.weights import (MAGIC, WeightFormatError, decode_tensors, encode_tensors, load_checkpoint,
                           save_checkpoint)


def _params(seed=0, d=4):
    p = init_params(seed, d=d, in_channels=3, kernel_size=3)
    rng = np.random.default_rng(seed)
    p.running_mean = rng.standard_normal(d)
    p.running_var = rng.random(d)
    p.step = 17
    return p


class TestFormat:
    def test_layout_by_hand(self):
        data = encode_tensors({"ab": np.array([[1.5, -2.0]])})
        body = (MAGIC + struct.pack("<Q", 1) + struct.pack("<Q", 2) + b"ab" + struct.pack("<Q", 2)
                + struct.pack("<QQ", 1, 2) + struct.pack("<2d", 1.5, -2.0))
        assert data == body + struct.pack("<I", zlib.crc32(body))

    def test_round_trip_bit_exact(self):
        t = {"x": np.random.default_rng(0).standard_normal((2, 3, 4)), "s": np.array([np.pi]),
             "tiny": np.array([5e-324, -0.0, np.inf])}
        back = decode_tensors(encode_tensors(t))
        assert list(back) == list(t)
        for k in t:
            assert back[k].tobytes() == t[k].astype("<f8").tobytes()

    def test_bad_magic_and_version(self):
        data = encode_tensors({"a": np.zeros(1)})
        with pytest.raises(WeightFormatError, match="magic"):
            decode_tensors(b"XXXXXXXX" + data[8:])
        with pytest.raises(WeightFormatError, match="version"):
            decode_tensors(b"V2TEX002" + data[8:])

    def test_truncation(self):
        data = encode_tensors({"a": np.arange(10.0)})
        for cut in (1, 5, 40, len(data) - 1):
            with pytest.raises(WeightFormatError):
                decode_tensors(data[:cut])

    def test_crc_catches_corruption(self):
        data = bytearray(encode_tensors({"a": np.arange(6.0)}))
        data[30] ^= 0x01
        with pytest.raises(WeightFormatError):
            decode_tensors(bytes(data))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = _params()
        save_checkpoint(p, tmp_path / "w.bin")
        q = load_checkpoint(tmp_path / "w.bin")
        for a in ("theta", "running_mean", "running_var"):
            assert getattr(q, a).tobytes() == getattr(p, a).tobytes()
        assert q.step == 17 and q.momentum == 0.1

    def test_save_load_save_identical(self, tmp_path):
        save_checkpoint(_params(1), tmp_path / "a.bin")
        save_checkpoint(load_checkpoint(tmp_path / "a.bin"), tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
        assert not (tmp_path / "a.bin.tmp").exists()

    def test_truncated_file(self, tmp_path):
        save_checkpoint(_params(), tmp_path / "w.bin")
        data = (tmp_path / "w.bin").read_bytes()
        (tmp_path / "w.bin").write_bytes(data[: len(data) // 2])
        with pytest.raises(WeightFormatError):
            load_checkpoint(tmp_path / "w.bin")

    def test_shape_mismatch_names_both(self, tmp_path):
        save_checkpoint(init_params(0), tmp_path / "w.bin")
        with pytest.raises(WeightFormatError) as exc:
            load_checkpoint(tmp_path / "w.bin", expect_shape=(32, 60, 7, 7))
        assert "(60, 60, 7, 7)" in str(exc.value) and "(32, 60, 7, 7)" in str(exc.value)

    def test_missing_tensor(self, tmp_path):
        (tmp_path / "w.bin").write_bytes(encode_tensors({"theta": np.zeros((1, 1, 1, 1))}))
        with pytest.raises(WeightFormatError, match="bn_running_mean"):
            load_checkpoint(tmp_path / "w.bin")

    def test_inconsistent_state(self, tmp_path):
        (tmp_path / "w.bin").write_bytes(encode_tensors({
            "theta": np.zeros((2, 1, 1, 1)), "bn_running_mean": np.zeros(3), "bn_running_var": np.ones(2)}))
        with pytest.raises(WeightFormatError, match="shape mismatch"):
            load_checkpoint(tmp_path / "w.bin")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "none.bin")
