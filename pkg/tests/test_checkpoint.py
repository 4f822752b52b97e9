import struct

import numpy as np
import pytest

from relcontrast.checkpoint import MAGIC, Checkpoint, load_checkpoint, save_checkpoint
from relcontrast.errors import CorruptPayload, IoError, VersionMismatch


def sample():
    rng = np.random.default_rng(0)
    return Checkpoint(
        {"w": rng.normal(size=(3, 4)), "b": np.array([1e-300, -0.0, np.pi]), "scalar": np.array(2.5)},
        {"config_hash": "abc", "step": 7, "rng_state": {"seed": 1}},
    )


def test_round_trip_is_bitwise(tmp_path):
    ck = sample()
    path = tmp_path / "c.rcc"
    save_checkpoint(ck, path)
    back = load_checkpoint(path)
    assert list(back.tensors) == list(ck.tensors)
    for name, arr in ck.tensors.items():
        assert back.tensors[name].shape == arr.shape
        assert back.tensors[name].tobytes() == np.asarray(arr, dtype=np.float64).tobytes()
    assert back.manifest["step"] == 7 and back.config_hash == "abc"
    save_checkpoint(back, tmp_path / "d.rcc")
    assert (tmp_path / "d.rcc").read_bytes() == path.read_bytes()


def test_truncation_and_bad_magic(tmp_path):
    path = tmp_path / "c.rcc"
    save_checkpoint(sample(), path)
    blob = path.read_bytes()
    for cut in (4, 30, len(blob) - 5):
        path.write_bytes(blob[:cut])
        with pytest.raises(CorruptPayload):
            load_checkpoint(path)
    path.write_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(CorruptPayload):
        load_checkpoint(path)
    flipped = bytearray(blob)
    flipped[-1] ^= 0xFF
    path.write_bytes(bytes(flipped))
    with pytest.raises(CorruptPayload):
        load_checkpoint(path)


def test_unknown_format_version(tmp_path):
    path = tmp_path / "c.rcc"
    save_checkpoint(sample(), path)
    blob = bytearray(path.read_bytes())
    struct.pack_into("<I", blob, len(MAGIC), 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(VersionMismatch):
        load_checkpoint(path)


def test_missing_file_and_no_partial_write(tmp_path):
    with pytest.raises(IoError):
        load_checkpoint(tmp_path / "none.rcc")
    save_checkpoint(sample(), tmp_path / "c.rcc")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["c.rcc"]
