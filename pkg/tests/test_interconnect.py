import json

import pytest
from hypothesis import given, strategies as st

import oracles
from xbar.interconnect import (ASAP7, CONFIG1, CONFIG2, CONFIG3, GeometryError,
                               LineConfiguration, SubarrayGeometry, get_config, line_conductances,
                               line_config_conductances, load_line_config, make_geometry,
                               metal_segment_conductance, min_cell_pitch, usable_width)


def test_metal_table():
    m1, m8 = ASAP7.layer("M1"), ASAP7.layer("M8")
    assert (m1.thickness, m1.min_spacing, m1.min_width, m1.resistivity) == (36, 18, 18, 43.2)
    assert (m8.thickness, m8.min_spacing, m8.min_width, m8.resistivity) == (80, 40, 40, 28.8)
    assert ASAP7.via_between(1, 2).resistance == 17
    assert ASAP7.via_between(8, 9).resistance == 6


def test_segment_examples():
    g1 = metal_segment_conductance(ASAP7.layer("M1"), 36, 18)
    assert 1 / g1 == pytest.approx(2.4)
    assert g1 == pytest.approx(0.41667, rel=1e-4)
    assert 1 / metal_segment_conductance(ASAP7.layer("M8"), 80, 40) == pytest.approx(0.72)
    for name, (rho, t) in {"M1": (43.2, 36), "M5": (36.9, 48), "M9": (28.8, 80)}.items():
        lay = ASAP7.layer(name)
        assert metal_segment_conductance(lay, 100, 50) == pytest.approx(
            oracles.segment_conductance(rho, t, 50, 100))


def test_segment_width_check():
    with pytest.raises(GeometryError):
        metal_segment_conductance(ASAP7.layer("M8"), 80, 30)
    with pytest.raises(GeometryError):
        metal_segment_conductance(ASAP7.layer("M1"), 0, 18)


def test_config1_single_layer_case():
    geom = SubarrayGeometry(1, 1, 36, 36)
    g_x, g_y = line_config_conductances(CONFIG1, geom)
    assert g_y == pytest.approx(0.41667, rel=1e-4)
    assert g_x == pytest.approx(0.41667, rel=1e-4)


def test_config2_wlt_is_parallel_sum():
    geom = SubarrayGeometry(1, 1, 80, 80)
    width = usable_width([ASAP7.layer(n) for n in CONFIG2.wlt_layers], 80)
    want = sum(metal_segment_conductance(ASAP7.layer(n), 80, width) for n in ("M3", "M6", "M8"))
    g2 = line_conductances(CONFIG2, geom)["wlt"]
    assert g2 == pytest.approx(want)
    assert g2 > line_conductances(CONFIG1, geom)["wlt"]


def test_min_pitch():
    assert min_cell_pitch(CONFIG1) == (36, 36)
    assert min_cell_pitch(CONFIG2) == (48, 80)
    assert min_cell_pitch(CONFIG3) == (36, 80)
    one = LineConfiguration("x", ("M4",), ("M3",), ("M2",))
    assert min_cell_pitch(one)[1] == ASAP7.layer("M4").pitch


def test_config_validation():
    with pytest.raises(ValueError):
        LineConfiguration("bad", ("M1",), ("M1",), ("M2",))
    with pytest.raises(ValueError):
        LineConfiguration("bad", (), ("M1",), ("M2",))
    with pytest.raises(KeyError):
        LineConfiguration("bad", ("M10",), ("M1",), ("M2",))
    with pytest.raises(KeyError):
        get_config("cfg9")


def test_load_line_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"wlt": ["M3", "M6"], "bl": ["M2"], "wlb": ["M1", "M7"],
                             "via_aware": True}))
    c = load_line_config(p)
    assert c.wlt_layers == ("M3", "M6") and c.via_aware


def test_via_aware_lowers_conductance():
    geom = make_geometry(CONFIG3, 8, 8)
    plain = line_conductances(CONFIG3, geom)
    via = line_conductances(CONFIG3.with_options(via_aware=True), geom)
    assert via["wlt"] < plain["wlt"] and via["bl"] == plain["bl"]


def test_bl_along_option():
    geom = SubarrayGeometry(1, 1, 36, 160)
    a = line_conductances(CONFIG3, geom)["bl"]
    b = line_conductances(CONFIG3.with_options(bl_along="l_cell"), geom)["bl"]
    assert a != b


lengths = st.floats(20, 2000)


@given(st.sampled_from(["M1", "M4", "M6", "M9"]), lengths, st.floats(40, 400))
def test_segment_linear_in_width_inverse_in_length(name, length, width):
    lay = ASAP7.layer(name)
    g = metal_segment_conductance(lay, length, width)
    assert metal_segment_conductance(lay, length, 2 * width) == pytest.approx(2 * g)
    assert metal_segment_conductance(lay, 2 * length, width) == pytest.approx(g / 2)


@given(st.sampled_from(["M4", "M5", "M6", "M7"]), st.floats(36, 400), st.floats(80, 800))
def test_adding_layer_never_decreases(extra, w, l):
    base = LineConfiguration("a", ("M3",), ("M2",), ("M1",))
    more = LineConfiguration("b", ("M3", extra), ("M2",), ("M1",))
    geom = SubarrayGeometry(1, 1, w, l)
    try:
        g_more = line_conductances(more, geom)["wlt"]
    except GeometryError:
        return
    assert g_more >= line_conductances(base, geom)["wlt"]


@given(st.floats(48, 400), st.floats(80, 800))
def test_config_order_of_wordline_conductance(w, l):
    geom = SubarrayGeometry(1, 1, w, l)
    g = [line_config_conductances(c, geom)[1] for c in (CONFIG1, CONFIG2, CONFIG3)]
    assert g[2] >= g[1] >= g[0] > 0
