import math

import pytest
from hypothesis import given, strategies as st

from hfo_pipe import headstage as hs


def test_lna_gain_settings():
    assert hs.lna_gain_db(hs.LnaParams(c_in=20e-12, c_f=200e-15)) == pytest.approx(40.0, abs=1e-12)
    assert hs.lna_gain_db(hs.LnaParams(c_in=2e-12, c_f=200e-15)) == pytest.approx(20.0, abs=1e-12)
    assert hs.lna_gain_db(hs.LnaParams(c_in=1e-12, c_f=1e-12)) == 0.0
    # the programmable list 20/32/36/40 dB is reproduced to within 1 dB
    gains = [hs.lna_gain_db(hs.LnaParams(c)) for c in hs.LNA_INPUT_CAPACITORS_F]
    assert [round(g) for g in gains] == [20, 32, 37, 40]
    for quoted, g in zip((20, 32, 36, 40), gains):
        assert abs(g - quoted) < 1.0


def test_lna_gain_near_quoted_maximum():
    # quoted maximum is about 40.2 dB; the capacitor ratio gives 40.0
    assert abs(hs.lna_gain_db(hs.LnaParams(20e-12)) - 40.2) < 0.25


def test_lna_bandwidth_formula():
    p = hs.LnaParams(c_in=20e-12, c_f=200e-15, gm=20e-9, c_load=20e-15)
    assert hs.lna_bandwidth_hz(p, 100.0) == pytest.approx(10_000.0, rel=1e-12)
    q = hs.LnaParams(c_in=20e-12, c_f=200e-15, gm=20e-9, c_load=40e-15)
    assert hs.lna_bandwidth_hz(q, 100.0) == pytest.approx(5_000.0, rel=1e-12)
    # the printed formula does not reproduce the quoted ~11.1 kHz
    assert abs(hs.lna_bandwidth_hz(p, 100.0) - 11_100.0) > 1_000.0
    with pytest.raises(ValueError):
        hs.lna_bandwidth_hz(p, 0.0)


def test_lna_invariants():
    with pytest.raises(ValueError):
        hs.LnaParams(c_in=100e-15, c_f=200e-15)
    with pytest.raises(ValueError):
        hs.LnaParams(c_in=2e-12, gm=0.0)


def test_towthomas_80hz_example():
    r = hs.towthomas_response(hs.TowThomasParams(r1=198.9e6, r2=50e6, r3=198.9e6, r4=198.9e6, c1=10e-12))
    # 1 / (2 pi 198.9e6 10e-12), evaluated independently
    assert r["f0_hz"] == pytest.approx(80.01760, abs=1e-4)
    assert abs(r["f0_hz"] - 80.0) < 0.05


def test_towthomas_unity_gain():
    assert hs.towthomas_response(hs.TowThomasParams(5e6, 1e6, 2e6, 5e6, 1e-12))["gain_linear"] == 1.0


def test_towthomas_invariants():
    with pytest.raises(ValueError):
        hs.TowThomasParams(1e6, 1e6, 0.0, 1e6, 1e-12)


pos = st.floats(1e3, 1e9)


@given(pos, pos, pos, st.floats(1e-13, 1e-9))
def test_general_matches_simplified(r, r1, r2, c1):
    g = hs.towthomas_response(hs.TowThomasParams(r1, r2, r, r, c1))
    s = hs.towthomas_simplified(r, r1, r2, c1)
    for k in ("f0_hz", "gain_linear", "bw_hz"):
        assert math.isclose(g[k], s[k], rel_tol=1e-12)
    assert math.isclose(g["bw_hz"] * r2 * c1, 1.0, rel_tol=1e-12)


@given(pos, pos, pos, pos, st.floats(1e-13, 1e-9), st.floats(0.01, 100.0))
def test_scale_covariance(r1, r2, r3, r4, c1, k):
    a = hs.towthomas_response(hs.TowThomasParams(r1, r2, r3, r4, c1))
    b = hs.towthomas_response(hs.TowThomasParams(k * r1, k * r2, k * r3, k * r4, c1 / k))
    assert math.isclose(a["f0_hz"], b["f0_hz"], rel_tol=1e-12)


def test_design_table_rows():
    rows = hs.design_table(hs.TowThomasParams(1e8, 1e8, 1e8, 1e8, 1e-11), hs.LnaParams(20e-12))
    assert [r["block"] for r in rows] == ["tow_thomas", "lna"]
    assert rows[1]["bw_hz"] == pytest.approx(10_000.0)
