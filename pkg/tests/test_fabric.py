import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import thresholded_mvm
from xbar.compute import Mode, SubarrayState, threshold_window, tmvm_execute
from xbar.drive import DrivePattern
from xbar.fabric import (ACTIVE, APPLIED, FLOAT, FLOAT_BUT_COLUMN, FLOAT_BUT_ROW, LINE_STATUS,
                         DisturbAbort, FabricPlan, LinkMode, NnSchedule, chain, execute_link_step,
                         execute_plan, line_statuses, link_drives, phase_voltages,
                         reference_two_layer, schedule_multilayer_nn)
from xbar.interconnect import CONFIG3, GeometryError, make_geometry


def pair(rows, cols, rows2=None, cols2=None, mode=LinkMode.BL_TO_WLT, **kw):
    g1 = make_geometry(CONFIG3, rows, cols)
    g2 = make_geometry(CONFIG3, rows2 or rows, cols2 or cols)
    return chain([SubarrayState.blank(g1, CONFIG3, **kw), SubarrayState.blank(g2, CONFIG3, **kw)],
                 mode)


def test_status_table_bl_to_bl():
    t = LINE_STATUS[LinkMode.BL_TO_BL]
    assert t[("WLB", 1)] == FLOAT and t[("WLB", 2)] == FLOAT_BUT_COLUMN
    plan = pair(4, 4, mode="BLtoBL")
    d1, d2 = link_drives(plan, plan.links[0], [1, 0, 1], 2, 0.5)
    assert line_statuses(d1, d2, "BLtoBL") == t
    assert d2.output_columns().tolist() == [2]


def test_status_table_bl_to_wlt():
    t = LINE_STATUS[LinkMode.BL_TO_WLT]
    assert t[("WLT", 2)] == ACTIVE and t[("WLB", 2)] == FLOAT and t[("BL", 2)] == FLOAT_BUT_ROW
    plan = pair(4, 4)
    for x in ([1, 1, 1, 1], [0, 0, 0, 0]):
        d1, d2 = link_drives(plan, plan.links[0], x, 1, 0.5)
        st_ = line_statuses(d1, d2, "BLtoWLT")
        assert st_ == t and st_[("WLT", 1)] == APPLIED


def test_standalone_plan():
    g = make_geometry(CONFIG3, 4, 4)
    plan = chain([SubarrayState.blank(g, CONFIG3)])
    assert plan.standalone and plan.links == []
    with pytest.raises(ValueError):
        chain([])


def test_chain_shape_checks():
    g4, g8 = make_geometry(CONFIG3, 4, 8), make_geometry(CONFIG3, 8, 4)
    s4, s8 = SubarrayState.blank(g4, CONFIG3), SubarrayState.blank(g8, CONFIG3)
    # BLtoWLT: source rows must match sink columns
    assert not chain([s4, s8], "BLtoWLT").standalone
    with pytest.raises(GeometryError):
        chain([s4, s8], "BLtoBL")
    with pytest.raises(ValueError):
        chain([s4, s8], "BLtoWLT", r_switch=-1)


@pytest.mark.parametrize("mode", ["BLtoBL", "BLtoWLT"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_link_analytic_vs_oracle(mode, seed):
    rng = np.random.default_rng(seed)
    plan = pair(6, 6, mode=mode)
    plan.subarrays[0].top[:] = rng.integers(0, 2, (6, 6))
    x = rng.integers(0, 2, 5)
    x[0] = 1
    res = [execute_link_step(plan, x, 3, 0.55, m, commit=False) for m in Mode]
    on = res[1].trace.row_currents > 1e-9
    np.testing.assert_allclose(res[0].trace.row_currents[on], res[1].trace.row_currents[on],
                               rtol=1e-2)
    assert np.array_equal(res[0].bits, res[1].bits)


@pytest.mark.parametrize("mode", ["BLtoBL", "BLtoWLT"])
def test_chaining_associativity(mode):
    # linked step == standalone TMVM of the source, written into the sink
    rng = np.random.default_rng(7)
    plan = pair(8, 8, mode=mode)
    w = rng.integers(0, 2, (8, 7))
    plan.subarrays[0].top[:, :7] = w
    x = rng.integers(0, 2, 7)
    x[:2] = 1
    v = threshold_window(1, int(x.sum()), plan.subarrays[0].geom, CONFIG3).mid
    res = execute_link_step(plan, x, 5, v)
    alone = SubarrayState.blank(plan.subarrays[0].geom, CONFIG3).with_weights(w)
    ref, _ = tmvm_execute(alone, DrivePattern.from_inputs(x, 8, 7, v, n_column=8))
    assert np.array_equal(res.bits, ref)
    written = (plan.subarrays[1].bottom[:, 5] if mode == "BLtoBL" else plan.subarrays[1].top[5])
    assert np.array_equal(written, ref)


def test_open_switch_blocks_row():
    plan = pair(4, 4)
    plan.subarrays[0].top[:] = 1
    plan.links[0].switches[2] = False
    for m in Mode:
        res = execute_link_step(plan, [1, 1], 0, 0.6, m, commit=False)
        assert res.bits[2] == 0 and res.bits[0] == 1


def test_step_counts():
    g = make_geometry(CONFIG3, 8, 8)
    w1 = np.ones((3, 5), np.int8)
    sch = schedule_multilayer_nn(w1, np.ones((1, 3)), 8, g)
    assert len(sch.hidden_steps()) == 8 and len(sch.output_steps()) == 1
    sch = schedule_multilayer_nn(w1, np.ones((1, 3)), 1, g)
    assert len(sch.hidden_steps()) == 1 and len(sch.output_steps()) == 1
    sch = schedule_multilayer_nn(w1, np.ones((2, 3)), 20, g)
    assert sch.n_batches == 3
    assert [len(sch.hidden_steps(b)) for b in range(3)] == [8, 8, 4]
    assert all(len(sch.output_steps(b)) == 2 for b in range(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2 ** 31))
def test_hidden_steps_ignore_weights(n, seed):
    rng = np.random.default_rng(seed)
    g = make_geometry(CONFIG3, 8, 8)
    a = schedule_multilayer_nn(rng.integers(0, 2, (4, 6)), rng.integers(0, 2, (2, 4)), n, g)
    b = schedule_multilayer_nn(np.zeros((4, 6)), np.zeros((2, 4)), n, g)
    assert [s.to_dict() for s in a.steps] == [s.to_dict() for s in b.steps]
    assert len(a.hidden_steps()) == n


def test_schedule_errors():
    g = make_geometry(CONFIG3, 4, 4)
    with pytest.raises(ValueError):
        schedule_multilayer_nn(np.ones((3, 4)), np.ones((1, 2)), 2, g)
    with pytest.raises(GeometryError):
        schedule_multilayer_nn(np.ones((5, 4)), np.ones((1, 5)), 2, g)
    with pytest.raises(ValueError):
        schedule_multilayer_nn(np.ones((3, 4)), np.ones((1, 3)), 0, g)


def toy():
    w1 = np.array([[1, 1, 0, 0, 1, 0], [0, 1, 1, 1, 0, 0], [1, 0, 0, 1, 1, 1]], np.int8)
    w2 = np.array([[1, 1, 0], [0, 1, 1]], np.int8)
    X = np.array([[int(b) for b in f"{i:06b}"] for i in range(0, 64, 3)], np.int8)
    return w1, w2, X


@pytest.mark.parametrize("mode", list(Mode))
def test_toy_nn_matches_reference(mode):
    w1, w2, X = toy()
    plan = pair(8, 8)
    sch = schedule_multilayer_nn(w1, w2, len(X), plan.subarrays[0].geom)
    run = execute_plan(plan, sch, X, mode=mode)
    H, Y = reference_two_layer(w1, w2, X, (1, 1))
    H2 = np.stack([thresholded_mvm(w1, x, 1) for x in X])
    assert np.array_equal(H, H2)
    assert np.array_equal(run.hidden, H) and np.array_equal(run.outputs, Y)
    assert all(s.get(("WLT", 1)) is None or s == LINE_STATUS[LinkMode.BL_TO_WLT]
               for s in run.statuses)
    assert run.energy > 0


def test_identity_second_layer():
    w1, _, X = toy()
    plan = pair(8, 8)
    sch = schedule_multilayer_nn(w1, np.eye(3, dtype=np.int8), len(X), plan.subarrays[0].geom)
    run = execute_plan(plan, sch, X)
    assert np.array_equal(run.outputs, run.hidden)


def test_zero_weights():
    _, _, X = toy()
    plan = pair(8, 8)
    sch = schedule_multilayer_nn(np.zeros((3, 6)), np.zeros((2, 3)), len(X),
                                 plan.subarrays[0].geom)
    run = execute_plan(plan, sch, X)
    assert not run.outputs.any() and not run.hidden.any()


def test_overvoltage_aborts():
    w1, w2, X = toy()
    plan = pair(8, 8)
    sch = schedule_multilayer_nn(w1, w2, len(X), plan.subarrays[0].geom)
    with pytest.raises(DisturbAbort) as exc:
        execute_plan(plan, sch, X, v_dd=(3.0, 3.0))
    # image 0 is all zeros, so the first disturb is at step 1
    assert exc.value.step == 1 and len(exc.value.report) > 0


def test_json_round_trips():
    w1, w2, X = toy()
    plan = pair(8, 8)
    plan.subarrays[0].top[0, :3] = 1
    sch = schedule_multilayer_nn(w1, w2, len(X), plan.subarrays[0].geom, thresholds=(2, 1))
    back = NnSchedule.from_json(sch.to_json())
    assert back.to_dict() == sch.to_dict()
    p2 = FabricPlan.from_dict(json.loads(json.dumps(plan.to_dict())))
    assert p2.to_dict() == plan.to_dict()


def test_phase_voltages_in_window():
    w1, w2, X = toy()
    plan = pair(8, 8)
    sch = schedule_multilayer_nn(w1, w2, len(X), plan.subarrays[0].geom)
    v1, v2 = phase_voltages(plan, sch)
    assert threshold_window(1, 6, plan.subarrays[0].geom, CONFIG3).contains(v1)
    assert threshold_window(1, 3, plan.subarrays[1].geom, CONFIG3).contains(v2)


def test_execute_plan_checks():
    w1, w2, X = toy()
    plan = pair(8, 8, mode="BLtoBL")
    sch = schedule_multilayer_nn(w1, w2, len(X), plan.subarrays[0].geom)
    with pytest.raises(ValueError):
        execute_plan(plan, sch, X)
    with pytest.raises(ValueError):
        execute_plan(pair(8, 8), sch, X[:3])
