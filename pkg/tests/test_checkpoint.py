import struct

import numpy as np
import pytest

from bdq.nn.checkpoint import CheckpointError, load_params, save_params


def test_round_trip_keeps_shapes_and_order(tmp_path):
    params = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "scalar": np.float32(1.5),
              "z.w": np.ones((1, 2, 3, 3, 3), np.float32)}
    save_params(params, tmp_path / "p.bdqp")
    back = load_params(tmp_path / "p.bdqp")
    assert list(back) == list(params)
    for k in params:
        assert back[k].shape == np.shape(params[k])
        np.testing.assert_array_equal(back[k], params[k])


def test_layout(tmp_path):
    save_params({"w": np.array([1.0, 2.0], np.float32)}, tmp_path / "p.bdqp")
    buf = (tmp_path / "p.bdqp").read_bytes()
    expected = b"BDQP" + struct.pack("<HI", 1, 1) + struct.pack("<H", 1) + b"w" + struct.pack("<BI", 1, 2) \
        + np.array([1.0, 2.0], "<f4").tobytes()
    assert buf == expected


@pytest.mark.parametrize("mutate, msg", [
    (lambda b: b"XXXX" + b[4:], "not a BDQP"),
    (lambda b: b[:-2], "truncated"),
    (lambda b: b + b"\0", "trailing"),
    (lambda b: b[:4] + struct.pack("<H", 9) + b[6:], "version"),
    (lambda b: b[:7], "truncated"),
])
def test_corrupt_files(tmp_path, mutate, msg):
    save_params({"w": np.zeros(3, np.float32)}, tmp_path / "p.bdqp")
    (tmp_path / "p.bdqp").write_bytes(mutate((tmp_path / "p.bdqp").read_bytes()))
    with pytest.raises(CheckpointError, match=msg):
        load_params(tmp_path / "p.bdqp")
