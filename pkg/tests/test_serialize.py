"""Round-trip and corruption tests for the TTR1/TTC1 containers."""

import numpy as np
import pytest

from ttqst import mpo, serialize, states, tt


def test_ttr1_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    t = tt.random_tt((4, 4, 4, 4), (2, 3, 2), rng)
    path = tmp_path / "t.ttr"
    serialize.write_ttr1(path, t)
    back = serialize.read_ttr1(path)
    assert back.mode_dims == t.mode_dims
    assert back.ranks == t.ranks
    for a, b in zip(back.cores, t.cores):
        np.testing.assert_array_equal(a, b)


def test_ttr1_deterministic_bytes(tmp_path):
    rng = np.random.default_rng(1)
    t = tt.random_tt((4, 4), (2,), rng)
    p1, p2 = tmp_path / "a.ttr", tmp_path / "b.ttr"
    serialize.write_ttr1(p1, t)
    serialize.write_ttr1(p2, t)
    assert p1.read_bytes() == p2.read_bytes()


def test_ttr1_bad_magic(tmp_path):
    path = tmp_path / "bad.ttr"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(serialize.SerializationError):
        serialize.read_ttr1(path)


def test_ttr1_truncated(tmp_path):
    rng = np.random.default_rng(2)
    t = tt.random_tt((4, 4, 4), (2, 2), rng)
    path = tmp_path / "t.ttr"
    serialize.write_ttr1(path, t)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(serialize.SerializationError):
        serialize.read_ttr1(path)


def test_ttc1_mps_round_trip(tmp_path):
    psi = states.random_mps(4, 2, 3, seed=5)
    path = tmp_path / "psi.ttc"
    serialize.write_ttc1(path, psi)
    back = serialize.read_ttc1(path)
    assert isinstance(back, mpo.Mps)
    for a, b in zip(back.cores, psi.cores):
        np.testing.assert_array_equal(a, b)


def test_ttc1_mpo_round_trip(tmp_path):
    psi = states.random_mps(3, 2, 2, seed=6)
    m = mpo.mps_to_mpo(psi)
    path = tmp_path / "rho.ttc"
    serialize.write_ttc1(path, m)
    back = serialize.read_ttc1(path)
    assert isinstance(back, mpo.Mpo)
    for a, b in zip(back.cores, m.cores):
        np.testing.assert_array_equal(a, b)


def test_ttc1_header_distinguishes_orders(tmp_path):
    psi = states.random_mps(3, 2, 2, seed=7)
    path = tmp_path / "x.ttc"
    serialize.write_ttc1(path, psi)
    raw = bytearray(path.read_bytes())
    assert raw[4] == 3
    serialize.write_ttc1(path, mpo.mps_to_mpo(psi))
    assert path.read_bytes()[4] == 4


def test_ttc1_rejects_unknown_tag(tmp_path):
    psi = states.random_mps(3, 2, 2, seed=8)
    path = tmp_path / "x.ttc"
    serialize.write_ttc1(path, psi)
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(serialize.SerializationError):
        serialize.read_ttc1(path)
