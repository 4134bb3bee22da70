import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from elasticpat import ConfigError
from elasticpat.formats import fmt, read_ewf, read_state, read_trace, write_csv, write_ewf, write_state, write_trace

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(arr=hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=4, max_side=6), elements=finite))
def test_ewf_roundtrip(tmp_path_factory, arr):
    p = tmp_path_factory.mktemp("ewf") / "a.ewf"
    write_ewf(p, arr)
    back = read_ewf(p)
    assert back.shape == arr.shape
    np.testing.assert_array_equal(back, arr)


def test_ewf_layout(tmp_path):
    arr = np.arange(6.0).reshape(2, 3)
    write_ewf(tmp_path / "a.ewf", arr)
    raw = (tmp_path / "a.ewf").read_bytes()
    assert raw[:4] == b"EWF1"
    assert raw[4] == 2
    assert struct.unpack("<2I", raw[5:13]) == (2, 3)
    assert np.frombuffer(raw[13:], "<f8").tolist() == [0, 1, 2, 3, 4, 5]


def test_ewf_missing(tmp_path):
    with pytest.raises(ConfigError) as e:
        read_ewf(tmp_path / "nope.ewf")
    assert e.value.key == "path"


def test_state_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    u, ut = rng.standard_normal((2, 2, 9, 8))
    write_state(tmp_path / "s.ews", u, ut, 2.5)
    u2, ut2, t = read_state(tmp_path / "s.ews")
    np.testing.assert_array_equal(u2, u)
    np.testing.assert_array_equal(ut2, ut)
    assert t == 2.5


def test_trace_roundtrip_and_header(tmp_path):
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((7, 2))
    vals = rng.standard_normal((5, 7, 2))
    write_trace(tmp_path / "g.ebt", 0.125, pts, vals)
    raw = (tmp_path / "g.ebt").read_bytes()
    assert raw[:4] == b"EBT1"
    assert struct.unpack_from("<dIIB", raw, 4) == (0.125, 5, 7, 2)
    dt, p2, v2 = read_trace(tmp_path / "g.ebt")
    assert dt == 0.125
    np.testing.assert_array_equal(p2, pts)
    np.testing.assert_array_equal(v2, vals)
    with pytest.raises(ValueError):
        write_trace(tmp_path / "bad.ebt", 0.1, pts[:3], vals)


def test_trace_errors(tmp_path):
    with pytest.raises(ConfigError) as e:
        read_trace(tmp_path / "missing.ebt")
    assert e.value.key == "trace"
    (tmp_path / "junk.ebt").write_bytes(b"XXXX0000")
    with pytest.raises(ConfigError):
        read_trace(tmp_path / "junk.ebt")


def test_fmt():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(float("nan")) == "nan"
    assert fmt(np.float64(2.0)) == "2"
    assert fmt(True) == "true"
    assert fmt(3) == "3"
    assert fmt("s") == "s"


def test_csv(tmp_path):
    write_csv(tmp_path / "x.csv", ("a", "b"), [(1, 0.5), (2, float("nan"))])
    assert (tmp_path / "x.csv").read_text() == "a,b\n1,0.5\n2,nan\n"
