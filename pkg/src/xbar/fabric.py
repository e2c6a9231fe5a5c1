"""Chaining two subarrays and scheduling a two-layer binary NN on them.

Two link modes connect subarray 1 to subarray 2 through switches:

* BLtoBL: BL k of subarray 1 meets BL k of subarray 2; results land in the
  bottom cells of one grounded WLB column of subarray 2.
* BLtoWLT: BL k of subarray 1 meets WLT k of subarray 2; results land in the
  top cells of one grounded BL (row) of subarray 2.

The NN layout follows the BLtoWLT link: layer-1 weights in the top cells of
subarray 1, one image per step writes its hidden vector into row m of the
top cells of subarray 2, then every output neuron takes one step that drives
the subarray-2 WLTs with its weights and collects the outputs of all M
images in one bottom column.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .compute import (CellDisturb, DisturbReport, ExecutionTrace, Mode, SubarrayState,
                      TmvmResult, dot_current, reference_bits, threshold_window, tmvm_execute)
from .device import CellState, PcmCellParams, PulseEvent, pulse_outcome
from .drive import BL_ACTIVE, BL_FLOAT, BL_GROUND, DrivePattern
from .interconnect import GeometryError, LineConfiguration, SubarrayGeometry, get_config, \
    line_conductances
from .network import NetworkBuilder, add_subarray, solve_network
from .thevenin import Ladder, ladder_row_profile


class LinkMode(str, enum.Enum):
    BL_TO_BL = "BLtoBL"
    BL_TO_WLT = "BLtoWLT"


APPLIED = "applied"
ACTIVE = "active"
FLOAT = "float"
FLOAT_BUT_ROW = "float except output row (ground)"
FLOAT_BUT_COLUMN = "float except output column (ground)"

# (line, subarray) -> status during a linked step
LINE_STATUS = {
    LinkMode.BL_TO_BL: {
        ("WLT", 1): APPLIED, ("WLT", 2): FLOAT,
        ("BL", 1): ACTIVE, ("BL", 2): ACTIVE,
        ("WLB", 1): FLOAT, ("WLB", 2): FLOAT_BUT_COLUMN,
    },
    LinkMode.BL_TO_WLT: {
        ("WLT", 1): APPLIED, ("WLT", 2): ACTIVE,
        ("BL", 1): ACTIVE, ("BL", 2): FLOAT_BUT_ROW,
        ("WLB", 1): FLOAT, ("WLB", 2): FLOAT,
    },
}


class DisturbAbort(RuntimeError):
    def __init__(self, step: int, report: DisturbReport):
        super().__init__(f"step {step}: {len(report)} cell(s) carried a RESET-level current")
        self.step = step
        self.report = report


@dataclass
class Link:
    source: int
    sink: int
    mode: LinkMode
    switches: np.ndarray          # closed state of each link switch
    r_switch: float = 0.0

    def to_dict(self) -> dict:
        return {"source": self.source, "sink": self.sink, "mode": self.mode.value,
                "switches": [bool(s) for s in self.switches], "r_switch": self.r_switch}


@dataclass
class FabricPlan:
    subarrays: List[SubarrayState]
    links: List[Link] = field(default_factory=list)

    @property
    def standalone(self) -> bool:
        return not self.links

    def to_dict(self) -> dict:
        subs = []
        for s in self.subarrays:
            g = s.geom
            subs.append({"n_row": g.n_row, "n_column": g.n_column, "w_cell": g.w_cell,
                         "l_cell": g.l_cell, "r_driver": g.r_driver, "config": s.config.name,
                         "ideal_wires": s.ideal_wires,
                         "top": s.top.tolist(), "bottom": s.bottom.tolist()})
        return {"subarrays": subs, "links": [l.to_dict() for l in self.links]}

    @classmethod
    def from_dict(cls, d: dict) -> "FabricPlan":
        subs = []
        for s in d["subarrays"]:
            g = SubarrayGeometry(s["n_row"], s["n_column"], s["w_cell"], s["l_cell"],
                                 s["r_driver"])
            subs.append(SubarrayState(s["top"], s["bottom"], g, get_config(s["config"]),
                                      ideal_wires=s.get("ideal_wires", False)))
        links = [Link(l["source"], l["sink"], LinkMode(l["mode"]),
                      np.asarray(l["switches"], bool), l.get("r_switch", 0.0))
                 for l in d["links"]]
        return cls(subs, links)


def link_width(mode: LinkMode, sink: SubarrayGeometry) -> int:
    return sink.n_row if LinkMode(mode) is LinkMode.BL_TO_BL else sink.n_column


def chain(subarrays: Sequence[SubarrayState], mode=LinkMode.BL_TO_WLT,
          r_switch: float = 0.0) -> FabricPlan:
    """Link consecutive subarrays. One subarray gives a plan without links."""
    subs = list(subarrays)
    if not subs:
        raise ValueError("need at least one subarray")
    if len(subs) > 2:
        raise ValueError("at most two chained subarrays are supported")
    mode = LinkMode(mode)
    if r_switch < 0:
        raise ValueError("switch resistance must be >= 0")
    links = []
    if len(subs) == 2:
        a, b = subs[0].geom, subs[1].geom
        need = link_width(mode, b)
        if a.n_row != need:
            what = "rows" if mode is LinkMode.BL_TO_BL else "columns"
            raise GeometryError(f"{mode.value}: source has {a.n_row} bit lines but the sink "
                                f"has {need} {what}")
        links.append(Link(0, 1, mode, np.ones(a.n_row, bool), r_switch))
    return FabricPlan(subs, links)


# ------------------------------------------------------------ line statuses


def _wlt_status(drive: DrivePattern, linked, source: bool = False) -> str:
    if linked is not None and np.all(linked):
        return ACTIVE
    # a source with an all-zero input vector still has its inputs applied
    if not drive.driven.any() and not source:
        return FLOAT
    return APPLIED


def _bl_status(drive: DrivePattern) -> str:
    if np.all(drive.bl == BL_ACTIVE):
        return ACTIVE
    if np.all(drive.bl == BL_FLOAT):
        return FLOAT
    if np.sum(drive.bl == BL_GROUND) == 1 and np.all(drive.bl != BL_ACTIVE):
        return FLOAT_BUT_ROW
    return "mixed"


def _wlb_status(drive: DrivePattern) -> str:
    n = int(drive.wlb_ground.sum())
    return FLOAT if n == 0 else (FLOAT_BUT_COLUMN if n == 1 else "mixed")


def line_statuses(d1: DrivePattern, d2: DrivePattern, mode) -> Dict[Tuple[str, int], str]:
    """Classify the lines of both subarrays for a linked step."""
    linked = np.ones(d2.n_column, bool) if LinkMode(mode) is LinkMode.BL_TO_WLT else None
    return {("WLT", 1): _wlt_status(d1, None, source=True), ("WLT", 2): _wlt_status(d2, linked),
            ("BL", 1): _bl_status(d1), ("BL", 2): _bl_status(d2),
            ("WLB", 1): _wlb_status(d1), ("WLB", 2): _wlb_status(d2)}


def link_drives(plan: FabricPlan, link: Link, inputs, target: int, v_dd: float,
                duration: float = 80e-9) -> Tuple[DrivePattern, DrivePattern]:
    """Drive patterns of both subarrays for one linked step."""
    s1, s2 = plan.subarrays[link.source], plan.subarrays[link.sink]
    g1, g2 = s1.geom, s2.geom
    x = np.asarray(inputs).astype(bool)
    if len(x) > g1.n_column:
        raise ValueError("more inputs than source columns")
    wlt1 = np.full(g1.n_column, np.nan)
    wlt1[: len(x)] = np.where(x, 1.0, np.nan)
    d1 = DrivePattern(wlt1, np.zeros(g1.n_column, bool), np.full(g1.n_row, BL_ACTIVE),
                      v_dd, duration)
    wlt2 = np.full(g2.n_column, np.nan)
    if link.mode is LinkMode.BL_TO_BL:
        if not 0 <= target < g2.n_column:
            raise ValueError("output column outside the sink")
        wlb2 = np.zeros(g2.n_column, bool)
        wlb2[target] = True
        bl2 = np.full(g2.n_row, BL_ACTIVE)
    else:
        if not 0 <= target < g2.n_row:
            raise ValueError("output row outside the sink")
        wlb2 = np.zeros(g2.n_column, bool)
        bl2 = np.full(g2.n_row, BL_FLOAT)
        bl2[target] = BL_GROUND
    d2 = DrivePattern(wlt2, wlb2, bl2, v_dd, duration)
    return d1, d2


# ------------------------------------------------------------ linked step


def _g(states, p):
    return np.where(np.asarray(states) > 0, p.gc, p.ga)


def _link_ladder(s1: SubarrayState, s2: SubarrayState, link: Link, x, target: int) -> Ladder:
    """Source WLT run and sink return line composed into one ladder.

    Row k of the source enters the sink at position k of its return line
    (WLB ``target`` for BLtoBL, BL ``target`` for BLtoWLT), so both runs
    advance together and form the steps of a single ladder. The rung gets
    the source BL run, the switch and the sink line up to the output cell.
    """
    p = s1.params
    d = max(int(x.sum()), 1)
    cols = np.flatnonzero(x)
    span1 = int(cols.max()) + 1 if len(cols) else 0
    g_in = _g(s1.top[:, : len(x)], p)[:, x].sum(axis=1)
    r_in = np.where(g_in > 0, 1.0 / np.where(g_in > 0, g_in, 1.0), np.inf)
    r_out = np.full(s1.geom.n_row, 1.0 / p.gc)
    rd1, rd2 = s1.geom.r_driver, s2.geom.r_driver
    if s1.ideal_wires:
        wlt1 = bl1 = 0.0
    else:
        g1 = line_conductances(s1.config, s1.geom)
        wlt1, bl1 = 1.0 / (d * g1["wlt"]), span1 / g1["bl"]
    if s2.ideal_wires:
        ret2 = run2 = 0.0
    else:
        g2 = line_conductances(s2.config, s2.geom)
        if link.mode is LinkMode.BL_TO_BL:
            ret2, run2 = 1.0 / g2["wlb"], (target + 1) / g2["bl"]
        else:
            ret2, run2 = 1.0 / g2["bl"], (target + 1) / g2["wlt"]
    return Ladder(wlt1 + ret2, rd1 / d + rd2, bl1 + link.r_switch + run2, r_in, r_out)


def _sink_tag(link: Link, k: int, target: int) -> str:
    return f"s2.bot.{k}.{target}" if link.mode is LinkMode.BL_TO_BL else f"s2.top.{target}.{k}"


def _link_oracle(s1, s2, link: Link, d1, d2, target: int):
    p = s1.params
    R = s1.geom.n_row
    top2, bot2 = s2.top.copy(), s2.bottom.copy()
    # output cells conduct as crystalline, as in the single-subarray oracle
    if link.mode is LinkMode.BL_TO_BL:
        bot2[:, target] = 1
    else:
        top2[target, :] = 1
    bld = NetworkBuilder()
    add_subarray(bld, s1.geom, s1.config, s1.top, s1.bottom, d1, p, prefix="s1.",
                 ideal_wires=s1.ideal_wires)
    linked = np.ones(s2.geom.n_column, bool) if link.mode is LinkMode.BL_TO_WLT else None
    add_subarray(bld, s2.geom, s2.config, top2, bot2, d2, p, prefix="s2.",
                 ideal_wires=s2.ideal_wires, wlt_active=linked)
    for k in range(R):
        if not link.switches[k]:
            continue
        far = f"s2.bl{k}.-1" if link.mode is LinkMode.BL_TO_BL else f"s2.wt{k}.-1"
        g = np.inf if link.r_switch == 0 else 1.0 / link.r_switch
        bld.branch(f"s1.bl{k}.-1", far, g, f"sw.{k}")
    net = bld.build()
    res = solve_network(net)
    idx = {t: n for n, t in enumerate(net.tags)}
    I = np.array([abs(res.branch_currents[idx[_sink_tag(link, k, target)]])
                  if _sink_tag(link, k, target) in idx else 0.0 for k in range(R)])
    top1 = np.zeros(s1.top.shape)
    for n, t in enumerate(net.tags):
        if t.startswith("s1.top."):
            _, _, k, i = t.split(".")
            top1[int(k), int(i)] = abs(res.branch_currents[n])
    power = float(sum(abs(res.branch_currents[n]) * d1.wlt_volts()[int(t.split(".")[-1])]
                      for n, t in enumerate(net.tags) if t.startswith("s1.drv.wlt.")))
    return I, top1, power


def execute_link_step(plan: FabricPlan, inputs, target: int, v_dd: float, mode="analytic",
                      link_index: int = 0, commit: bool = True,
                      duration: float = 80e-9) -> TmvmResult:
    """One linked step: source TMVM with its results written into the sink."""
    link = plan.links[link_index]
    s1, s2 = plan.subarrays[link.source], plan.subarrays[link.sink]
    p = s1.params
    mode = Mode(mode)
    x = np.zeros(s1.geom.n_column, bool)
    xi = np.asarray(inputs).astype(bool)
    x[: len(xi)] = xi
    d1, d2 = link_drives(plan, link, xi, target, v_dd, duration)
    R = s1.geom.n_row
    if not x.any():
        I, top1, power = np.zeros(R), np.zeros(s1.top.shape), 0.0
    elif mode is Mode.ANALYTIC:
        lad = _link_ladder(s1, s2, link, x, target)
        alpha, r_th = ladder_row_profile(lad)
        on = np.isfinite(lad.r_in)
        I = np.zeros(R)
        I[on] = alpha[on] * v_dd / (r_th[on] + lad.r_in[on] + lad.r_out[on])
        I[~link.switches] = 0.0
        G = _g(s1.top, p) * x[None, :]
        g_in = G.sum(axis=1)
        top1 = np.where(g_in[:, None] > 0, G * (I / np.where(g_in > 0, g_in, 1.0))[:, None], 0)
        power = float(v_dd * I.sum())
    else:
        I, top1, power = _link_oracle(s1, s2, link, d1, d2, target)
    disturb = DisturbReport()
    lvl2 = "bottom" if link.mode is LinkMode.BL_TO_BL else "top"
    for k in np.flatnonzero(I >= p.i_reset * (1 - 1e-12)):
        r, c = (k, target) if link.mode is LinkMode.BL_TO_BL else (target, k)
        disturb.cells.append(CellDisturb(f"sink-{lvl2}", int(r), int(c), float(I[k])))
    for k, i in zip(*np.nonzero(top1 >= p.i_reset * (1 - 1e-12))):
        disturb.cells.append(CellDisturb("top", int(k), int(i), float(top1[k, i])))
    bits = np.zeros(R, np.int8)
    events = []
    for k in range(R):
        new, ev = pulse_outcome(CellState.AMORPHOUS, float(I[k]), duration, p)
        bits[k] = int(new)
        if ev is PulseEvent.RESET:
            events.append(f"reset at row {k}")
    if commit:
        sel = link.switches
        if link.mode is LinkMode.BL_TO_BL:
            s2.bottom[sel, target] = bits[sel]
        else:
            s2.top[target, sel] = bits[sel]
    n_act = (s1.top[:, x] > 0).sum(axis=1)
    dot = dot_current(n_act, int(x.sum()) - n_act, v_dd, p) if x.any() else np.zeros(R)
    trace = ExecutionTrace(f"{mode.value}-{link.mode.value}", v_dd, duration, int(target),
                           np.arange(R), I, np.asarray(dot, float), power, events)
    return TmvmResult(bits, disturb, trace)


# ------------------------------------------------------------ NN schedule


@dataclass(frozen=True)
class FabricStep:
    phase: str                 # "hidden" or "output"
    batch: int
    subarray: int              # subarray whose cells receive the results
    target: int                # sink row (hidden) or output column (output)
    image: Optional[int] = None
    neuron: Optional[int] = None
    rows: Tuple[int, ...] = ()  # active sink rows in an output step

    def to_dict(self) -> dict:
        return {"phase": self.phase, "batch": self.batch, "subarray": self.subarray,
                "target": self.target, "image": self.image, "neuron": self.neuron,
                "rows": list(self.rows)}


@dataclass
class NnSchedule:
    steps: List[FabricStep]
    images_per_batch: int
    n_images: int
    weights1: np.ndarray
    weights2: np.ndarray
    thresholds: Tuple[int, int] = (1, 1)

    def hidden_steps(self, batch: Optional[int] = None) -> List[FabricStep]:
        return [s for s in self.steps if s.phase == "hidden" and (batch is None or s.batch == batch)]

    def output_steps(self, batch: Optional[int] = None) -> List[FabricStep]:
        return [s for s in self.steps if s.phase == "output" and (batch is None or s.batch == batch)]

    @property
    def n_batches(self) -> int:
        return -(-self.n_images // self.images_per_batch)

    def to_dict(self) -> dict:
        return {"images_per_batch": self.images_per_batch, "n_images": self.n_images,
                "thresholds": list(self.thresholds),
                "weights1": self.weights1.tolist(), "weights2": self.weights2.tolist(),
                "steps": [s.to_dict() for s in self.steps]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "NnSchedule":
        steps = [FabricStep(s["phase"], s["batch"], s["subarray"], s["target"], s["image"],
                            s["neuron"], tuple(s["rows"])) for s in d["steps"]]
        return cls(steps, d["images_per_batch"], d["n_images"],
                   np.asarray(d["weights1"], np.int8), np.asarray(d["weights2"], np.int8),
                   tuple(d["thresholds"]))

    @classmethod
    def from_json(cls, text: str) -> "NnSchedule":
        return cls.from_dict(json.loads(text))


def schedule_multilayer_nn(weights1, weights2, n_images: int, geom: SubarrayGeometry,
                           geom2: Optional[SubarrayGeometry] = None,
                           thresholds: Tuple[int, int] = (1, 1)) -> NnSchedule:
    """Step list for a two-layer binary NN on two BLtoWLT-linked subarrays.

    weights1: (hidden x inputs), weights2: (outputs x hidden). ``geom`` is
    subarray 1; subarray 2 defaults to the same geometry.
    """
    w1 = np.asarray(weights1, np.int8)
    w2 = np.asarray(weights2, np.int8)
    g2 = geom if geom2 is None else geom2
    if w1.ndim != 2 or w2.ndim != 2 or w2.shape[1] != w1.shape[0]:
        raise ValueError("weights2 must have one column per hidden neuron")
    if w1.shape[0] > geom.n_row or w1.shape[1] > geom.n_column:
        raise GeometryError(f"layer 1 ({w1.shape[0]}x{w1.shape[1]}) exceeds subarray 1")
    if w1.shape[0] > g2.n_column or w2.shape[0] > g2.n_column:
        raise GeometryError("hidden or output layer exceeds the columns of subarray 2")
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    M = min(g2.n_row, n_images)
    steps = []
    for b, start in enumerate(range(0, n_images, M)):
        m = min(M, n_images - start)
        for r in range(m):
            steps.append(FabricStep("hidden", b, 1, r, image=start + r))
        for j in range(w2.shape[0]):
            steps.append(FabricStep("output", b, 1, j, neuron=j, rows=tuple(range(m))))
    return NnSchedule(steps, M, n_images, w1, w2, tuple(int(t) for t in thresholds))


def reference_two_layer(w1, w2, X, thresholds) -> Tuple[np.ndarray, np.ndarray]:
    """Thresholded binary two-layer forward pass: (hidden, outputs) per image."""
    X = np.atleast_2d(np.asarray(X, np.int64))
    H = np.stack([reference_bits(w1, x, thresholds[0]) for x in X])
    Y = np.stack([reference_bits(w2, h, thresholds[1]) for h in H])
    return H.astype(np.int8), Y.astype(np.int8)


@dataclass
class FabricRun:
    hidden: np.ndarray      # (n_images, n_hidden)
    outputs: np.ndarray     # (n_images, n_outputs)
    traces: List[ExecutionTrace]
    v_dd: Tuple[float, float]
    statuses: List[Dict[Tuple[str, int], str]]

    @property
    def energy(self) -> float:
        return float(sum(t.energy for t in self.traces))


def phase_voltages(plan: FabricPlan, schedule: NnSchedule) -> Tuple[float, float]:
    """Mid-window supplies realizing the two layer thresholds."""
    s1, s2 = plan.subarrays[0], plan.subarrays[1]
    n_in, n_h = schedule.weights1.shape[1], schedule.weights1.shape[0]
    k1, k2 = schedule.thresholds
    w1 = threshold_window(k1, n_in, s1.geom, s1.config, s1.params,
                          ideal_wires=s1.ideal_wires)
    w2 = threshold_window(k2, n_h, s2.geom, s2.config, s2.params,
                          ideal_wires=s2.ideal_wires)
    return w1.mid, w2.mid


def execute_plan(plan: FabricPlan, schedule: NnSchedule, X, v_dd=None,
                 mode="analytic") -> FabricRun:
    """Run a two-layer schedule. Aborts with DisturbAbort at the first disturb."""
    if len(plan.subarrays) != 2 or len(plan.links) != 1:
        raise ValueError("an NN schedule needs two linked subarrays")
    link = plan.links[0]
    if link.mode is not LinkMode.BL_TO_WLT:
        raise ValueError("the NN layout uses the BLtoWLT link")
    X = np.atleast_2d(np.asarray(X, np.int8))
    if len(X) != schedule.n_images:
        raise ValueError(f"schedule expects {schedule.n_images} images, got {len(X)}")
    s1, s2 = plan.subarrays
    w1, w2 = schedule.weights1, schedule.weights2
    n_h, n_out = w1.shape[0], w2.shape[0]
    if X.shape[1] != w1.shape[1]:
        raise ValueError("input width does not match layer 1")
    v1, v2 = phase_voltages(plan, schedule) if v_dd is None else v_dd
    s1.top[:] = 0
    s1.top[:n_h, : w1.shape[1]] = w1
    hidden = np.zeros((len(X), n_h), np.int8)
    outputs = np.zeros((len(X), n_out), np.int8)
    traces, statuses = [], []
    M = schedule.images_per_batch
    batch = -1
    for n, st in enumerate(schedule.steps):
        if st.batch != batch:
            batch = st.batch
            s2.top[:] = 0
            s2.bottom[:] = 0
        if st.phase == "hidden":
            d1, d2 = link_drives(plan, link, X[st.image], st.target, v1)
            status = line_statuses(d1, d2, link.mode)
            if status != LINE_STATUS[link.mode]:
                raise RuntimeError(f"step {n}: line statuses {status} do not match the link table")
            res = execute_link_step(plan, X[st.image], st.target, v1, mode)
            hidden[st.image] = s2.top[st.target, :n_h]
        else:
            rows = list(st.rows)
            drive = DrivePattern.from_inputs(w2[st.neuron], s2.geom.n_row, st.target, v2,
                                             n_column=s2.geom.n_column, rows=rows)
            status = {("WLT", 2): APPLIED, ("BL", 2): _bl_status(drive),
                      ("WLB", 2): _wlb_status(drive)}
            res = tmvm_execute(s2, drive, mode)
            imgs = batch * M + np.arange(len(rows))
            outputs[imgs, st.neuron] = s2.bottom[rows, st.target]
        statuses.append(status)
        traces.append(res.trace)
        if not res.disturb.empty:
            raise DisturbAbort(n, res.disturb)
    return FabricRun(hidden, outputs, traces, (v1, v2), statuses)
