"""Thresholded matrix-vector multiplication on one subarray.

Weights sit in the top cells: row r, column i holds the weight linking input
i to output r. Inputs drive WLTs (logic 1 -> V_DD, logic 0 -> floating).
The products of row r meet on BL r and flow through the bottom cell at the
grounded output column, which SETs once the summed current reaches I_SET.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .device import CellState, PcmCellParams, PulseEvent, pulse_outcome, reaches
from .drive import BL_ACTIVE, BL_FLOAT, BL_GROUND, DrivePattern
from .interconnect import LineConfiguration, SubarrayGeometry, line_conductances
from .margin import VoltageWindow
from .thevenin import Ladder, ladder_row_profile


class Mode(str, enum.Enum):
    ANALYTIC = "analytic"
    ORACLE = "oracle"


@dataclass
class SubarrayState:
    top: np.ndarray
    bottom: np.ndarray
    geom: SubarrayGeometry
    config: LineConfiguration
    params: PcmCellParams = field(default_factory=PcmCellParams)
    ideal_wires: bool = False

    def __post_init__(self):
        shape = (self.geom.n_row, self.geom.n_column)
        self.top = np.array(self.top, dtype=np.int8)
        self.bottom = np.array(self.bottom, dtype=np.int8)
        if self.top.shape != shape or self.bottom.shape != shape:
            raise ValueError(f"state matrices must be {shape}")
        if not (np.isin(self.top, (0, 1)).all() and np.isin(self.bottom, (0, 1)).all()):
            raise ValueError("cell states must be 0 or 1")

    @classmethod
    def blank(cls, geom, config, params=PcmCellParams(), **kw) -> "SubarrayState":
        z = np.zeros((geom.n_row, geom.n_column), dtype=np.int8)
        return cls(z, z.copy(), geom, config, params, **kw)

    def with_weights(self, weights, col0: int = 0, row0: int = 0) -> "SubarrayState":
        """Write a (rows x inputs) 0/1 block into the top cells, return self."""
        w = np.asarray(weights, dtype=np.int8)
        self.top[row0:row0 + w.shape[0], col0:col0 + w.shape[1]] = w
        return self


@dataclass(frozen=True)
class CellDisturb:
    level: str       # "top" or "bottom"
    row: int
    column: int
    current: float


@dataclass
class DisturbReport:
    cells: List[CellDisturb] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.cells

    def __len__(self):
        return len(self.cells)

    def to_dict(self) -> dict:
        return {"count": len(self.cells),
                "cells": [c.__dict__ for c in self.cells]}


@dataclass
class ExecutionTrace:
    mode: str
    v_dd: float
    duration: float
    output_column: int
    rows: np.ndarray            # indices of active rows
    row_currents: np.ndarray    # delivered output-cell current per row (NaN: inactive)
    dot_currents: np.ndarray    # parasitic-free current per row from the dot product
    source_power: float         # total power delivered by the drivers (W)
    events: List[str] = field(default_factory=list)

    @property
    def energy(self) -> float:
        return self.source_power * self.duration


@dataclass
class TmvmResult:
    bits: np.ndarray
    disturb: DisturbReport
    trace: ExecutionTrace

    def __iter__(self):
        yield self.bits
        yield self.disturb


# ------------------------------------------------------------ dot products


def _cell_g(states, params):
    return np.where(np.asarray(states) == 1, params.gc, params.ga)


def ideal_dot_currents(state: SubarrayState, drive: DrivePattern,
                       g_out: Optional[float] = None) -> np.ndarray:
    """Parasitic-free output current of every row (0 where nothing is driven)."""
    p = state.params
    g_out = p.gc if g_out is None else g_out
    drv = drive.driven
    G = _cell_g(state.top[:, drv], p)
    V = drive.wlt_volts()[drv]
    s_g = G.sum(axis=1)
    s_vg = G @ V
    return g_out * s_vg / (s_g + g_out)


def ideal_dot_current(row: int, state: SubarrayState, drive: DrivePattern,
                      g_out: Optional[float] = None) -> float:
    """Current into the output cell of one row, from driven lines only."""
    if not drive.driven.any():
        raise ValueError("no driven input lines")
    return float(ideal_dot_currents(state, drive, g_out)[row])


def dot_current(n_active: int, n_amorphous: int, v_dd: float,
                params: PcmCellParams = PcmCellParams(), g_out: Optional[float] = None):
    """Parasitic-free current for a row with the given numbers of driven cells."""
    g_out = params.gc if g_out is None else g_out
    g_in = n_active * params.gc + n_amorphous * params.ga
    return g_out * v_dd * g_in / (g_in + g_out)


# ------------------------------------------------------------ analytic mode


def step_ladder(geom: SubarrayGeometry, config: LineConfiguration, params: PcmCellParams,
                g_in_rows: np.ndarray, n_driven: int, bl_span: int,
                ideal_wires: bool = False, g_out: Optional[float] = None) -> Ladder:
    """Lumped ladder for one step.

    The driven WLTs are merged into one line of n_driven parallel strands,
    each with its own driver. Rows with no input load (g_in = 0) are open.
    """
    d = max(n_driven, 1)
    if ideal_wires:
        r_step, r_bl = 0.0, 0.0
    else:
        g = line_conductances(config, geom)
        r_step = 1.0 / (d * g["wlt"]) + 1.0 / g["wlb"]
        r_bl = bl_span / g["bl"]
    g_out = params.gc if g_out is None else g_out
    g_in_rows = np.asarray(g_in_rows, dtype=float)
    with np.errstate(divide="ignore"):
        r_in = np.where(g_in_rows > 0, 1.0 / np.where(g_in_rows > 0, g_in_rows, 1.0), np.inf)
    r_out = np.full(len(g_in_rows), 1.0 / g_out)
    return Ladder(r_step, geom.r_driver / d + geom.r_driver, r_bl, r_in, r_out)


def _bl_span(drive: DrivePattern, col: int) -> int:
    cols = np.flatnonzero(drive.driven)
    return int(np.abs(cols - col).max()) if len(cols) else 0


def _analytic(state: SubarrayState, drive: DrivePattern, col: int):
    p = state.params
    drv = drive.driven
    active = drive.bl != BL_FLOAT
    G = _cell_g(state.top[:, drv], p) * active[:, None]
    V = drive.wlt_volts()[drv]
    g_in = G.sum(axis=1)
    lad = step_ladder(state.geom, state.config, p, g_in, int(drv.sum()),
                      _bl_span(drive, col), state.ideal_wires)
    alpha, r_th = ladder_row_profile(lad)
    I = np.zeros(state.geom.n_row)
    cell_I = np.zeros_like(G)
    on = g_in > 0
    v_eq = np.where(on, (G @ V) / np.where(on, g_in, 1.0), 0.0)
    I[on] = alpha[on] * v_eq[on] / (r_th[on] + 1.0 / g_in[on] + 1.0 / p.gc)
    # split the row current among its input cells. The r_th drop sits outside
    # the cell bundle, so the shared node u makes the cell currents sum to I
    u = v_eq * alpha - np.where(on, I / np.where(on, g_in, 1.0), 0.0)
    cell_I = np.abs(G * (alpha[:, None] * V[None, :] - u[:, None]))
    cell_I[~on] = 0.0
    power = float(np.sum(cell_I * V[None, :]))
    return I, cell_I, power


# ------------------------------------------------------------ oracle mode


def _oracle(state: SubarrayState, drive: DrivePattern, col: int, netlist_path=None):
    from .network import build_crossbar_network, solve_network

    bottom = state.bottom.copy()
    active = drive.bl != BL_FLOAT
    bottom[active, col] = 1  # output evaluated at the sustain (crystalline) value
    net = build_crossbar_network(state.geom, state.config, state.top, bottom, drive,
                                 state.params, ideal_wires=state.ideal_wires)
    if netlist_path is not None:
        with open(netlist_path, "w") as fh:
            fh.write(net.netlist())
    res = solve_network(net)
    R, C = state.geom.n_row, state.geom.n_column
    I = np.zeros(R)
    top_I = np.zeros((R, C))
    bot_I = np.zeros((R, C))
    for t, cur in zip(net.tags, res.branch_currents):
        if t.startswith("top.") or t.startswith("bot."):
            lvl, k, i = t.split(".")
            (top_I if lvl == "top" else bot_I)[int(k), int(i)] = abs(cur)
    I[:] = bot_I[:, col]
    # power delivered by every source node
    power = 0.0
    v = res.node_voltages
    for node, volts in net.fixed.items():
        if volts == 0.0:
            continue
        m_a = net.a == node
        m_b = net.b == node
        out = np.sum(res.branch_currents[m_a]) - np.sum(res.branch_currents[m_b])
        power += volts * out
    return I, top_I, bot_I, float(power)


# ------------------------------------------------------------ execution


def tmvm_execute(state: SubarrayState, drive: DrivePattern, mode="analytic",
                 commit: bool = True, window: Optional[VoltageWindow] = None,
                 netlist_path=None) -> TmvmResult:
    """Run one TMVM step.

    The target column is the single grounded WLB. Its cells on active rows
    are preset to logic 0, then each SETs if the delivered current reaches
    I_SET for the pulse duration. Any cell carrying I_RESET or more is
    reported as a disturb. With commit=False the state is left untouched.
    """
    mode = Mode(mode)
    R, C = state.geom.n_row, state.geom.n_column
    if drive.n_row != R or drive.n_column != C:
        raise ValueError("drive pattern does not match the subarray")
    outs = drive.output_columns()
    if len(outs) != 1:
        raise ValueError("a TMVM step needs exactly one grounded WLB")
    col = int(outs[0])
    if (drive.bl == BL_GROUND).any():
        raise ValueError("grounded bit lines are only used for chaining")
    p = state.params
    active = drive.bl != BL_FLOAT
    rows = np.flatnonzero(active)
    events = []
    if window is not None and not window.contains(drive.v_dd):
        msg = f"v_dd={drive.v_dd:.4g} V outside [{window.v_lo:.4g}, {window.v_hi:.4g}] V"
        warnings.warn(msg)
        events.append("warning: " + msg)
    disturb = DisturbReport()
    if not drive.driven.any():
        I = np.zeros(R)
        power = 0.0
        top_I = np.zeros((R, C))
        bot_I = np.zeros((R, C))
    elif mode is Mode.ANALYTIC:
        I, cell_I, power = _analytic(state, drive, col)
        top_I = np.zeros((R, C))
        top_I[:, drive.driven] = cell_I
        bot_I = np.zeros((R, C))
        bot_I[:, col] = I
    else:
        I, top_I, bot_I, power = _oracle(state, drive, col, netlist_path)
    for lvl, M in (("top", top_I), ("bottom", bot_I)):
        for k, i in zip(*np.nonzero(M >= p.i_reset * (1 - 1e-12))):
            disturb.cells.append(CellDisturb(lvl, int(k), int(i), float(M[k, i])))
    bits = np.zeros(R, dtype=np.int8)
    for k in rows:
        new, ev = pulse_outcome(CellState.AMORPHOUS, float(I[k]), drive.duration, p)
        bits[k] = int(new)
        if ev is PulseEvent.RESET:
            events.append(f"reset at row {k}")
    if commit:
        state.bottom[rows, col] = bits[rows]
    cur = np.full(R, np.nan)
    cur[rows] = I[rows]
    dot = np.full(R, np.nan)
    if drive.driven.any():
        dot[rows] = ideal_dot_currents(state, drive)[rows]
    else:
        dot[rows] = 0.0
    trace = ExecutionTrace(mode.value, drive.v_dd, drive.duration, col, rows, cur, dot,
                           power, events)
    return TmvmResult(bits, disturb, trace)


def reference_bits(weights, inputs, k: int) -> np.ndarray:
    """Pure thresholded binary MVM: bit_r = [sum_i x_i w_ri >= k]."""
    w = np.asarray(weights, dtype=np.int64)
    x = np.asarray(inputs, dtype=np.int64)
    return ((w @ x) >= k).astype(np.int8)


# ------------------------------------------------------------ thresholds


def _pattern_profile(geom, config, params, g_row, n_driven, bl_span, ideal_wires):
    g_in = np.full(geom.n_row, g_row)
    lad = step_ladder(geom, config, params, g_in, n_driven, bl_span, ideal_wires)
    return ladder_row_profile(lad)


def effective_threshold(v_dd: float, n_driven: int, geom: SubarrayGeometry,
                        config: LineConfiguration, params: PcmCellParams = PcmCellParams(),
                        row: Optional[int] = None, ideal_wires: bool = False,
                        bl_span: Optional[int] = None) -> int:
    """Smallest number of active inputs (out of n_driven) that SETs the output.

    The other driven inputs are amorphous, and every row of the subarray is
    assumed to carry the same pattern. Returns n_driven + 1 when even the
    all-active pattern falls short.
    """
    if not v_dd > 0 or n_driven < 1:
        raise ValueError("need v_dd > 0 and n_driven >= 1")
    row = geom.n_row - 1 if row is None else row
    span = geom.n_column - 1 if bl_span is None else bl_span
    for k in range(n_driven + 1):
        g_row = k * params.gc + (n_driven - k) * params.ga
        alpha, r_th = _pattern_profile(geom, config, params, g_row, n_driven, span, ideal_wires)
        i = alpha[row] * v_dd / (r_th[row] + 1.0 / g_row + 1.0 / params.gc)
        if reaches(i, params.i_set):
            return k
    return n_driven + 1


def threshold_window(k: int, n_inputs: int, geom: SubarrayGeometry, config: LineConfiguration,
                     params: PcmCellParams = PcmCellParams(), a_max: Optional[int] = None,
                     rows: Optional[int] = None, ideal_wires: bool = False,
                     bl_span: Optional[int] = None) -> VoltageWindow:
    """Supplies that make every row realize "at least k active inputs".

    The lower end makes the worst-placed row SET with exactly k active
    inputs while every other row draws its maximum current (a_max active,
    the remaining inputs amorphous). The upper end keeps the parasitic-free
    first row from SETting with k-1 active inputs plus amorphous ones, and
    from RESETting with a_max active inputs. ``rows`` limits the rows in use.
    """
    if not 1 <= k <= n_inputs:
        raise ValueError("need 1 <= k <= n_inputs")
    p = params
    a_max = n_inputs if a_max is None else a_max
    used = geom.n_row if rows is None else rows
    g_geom = geom.resized(n_row=used)
    span = geom.n_column - 1 if bl_span is None else bl_span
    g_heavy = a_max * p.gc + (n_inputs - a_max) * p.ga
    alpha, r_th = _pattern_profile(g_geom, config, p, g_heavy, n_inputs, span, ideal_wires)
    r_k = 1.0 / (k * p.gc) + 1.0 / p.gc
    v_lo = float(np.max(p.i_set * (r_th + r_k) / alpha))
    g_false = (k - 1) * p.gc + (n_inputs - k + 1) * p.ga
    v_false = p.i_set * (1.0 / g_false + 1.0 / p.gc)
    v_reset = p.i_reset * (1.0 / g_heavy + 1.0 / p.gc)
    return VoltageWindow(v_lo, min(v_false, v_reset))


# ------------------------------------------------------------ multi-bit


class Scheme(str, enum.Enum):
    AREA_EFFICIENT = "area_efficient"
    LOW_POWER = "low_power"


@dataclass(frozen=True)
class MultiBitLayout:
    scheme: Scheme
    bits: int
    cells_per_element: int
    cell_bit: tuple        # which weight bit each cell of an element holds
    cell_scale: tuple      # WLT voltage multiple for each cell
    base_voltage: float
    v_limit: float

    @property
    def max_voltage(self) -> float:
        return max(self.cell_scale) * self.base_voltage

    @property
    def feasible(self) -> bool:
        return self.max_voltage <= self.v_limit

    def expand_weights(self, w) -> np.ndarray:
        """(rows x elements) integer weights -> (rows x elements*cells) bit cells."""
        w = np.asarray(w, dtype=np.int64)
        if (w < 0).any() or (w >= 2 ** self.bits).any():
            raise ValueError(f"weights must fit in {self.bits} bits")
        bits = [(w >> b) & 1 for b in self.cell_bit]
        return np.stack(bits, axis=-1).reshape(w.shape[0], -1).astype(np.int8)

    def expand_inputs(self, x) -> tuple:
        """Binary inputs -> (per-cell drive flags, per-cell voltage multiples)."""
        x = np.asarray(x, dtype=bool)
        flags = np.repeat(x, self.cells_per_element)
        scale = np.tile(np.array(self.cell_scale, dtype=float), len(x))
        return flags, scale


def multibit_layout(bits: int, scheme, base_voltage: float = 0.63,
                    v_limit: float = 5.0) -> MultiBitLayout:
    """Cell/voltage layout of one b-bit weight element."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    scheme = Scheme(scheme)
    if scheme is Scheme.AREA_EFFICIENT:
        cell_bit = tuple(range(bits))
        scale = tuple(float(2 ** b) for b in range(bits))
    else:
        cell_bit = tuple(b for b in range(bits) for _ in range(2 ** b))
        scale = tuple(1.0 for _ in cell_bit)
    return MultiBitLayout(scheme, bits, len(cell_bit), cell_bit, scale, base_voltage, v_limit)


def estimate_area(geom: SubarrayGeometry, layout: Optional[MultiBitLayout] = None,
                  n_elements: int = 1) -> float:
    """Footprint in nm^2 of n_elements weight elements."""
    cells = n_elements * (1 if layout is None else layout.cells_per_element)
    return cells * geom.w_cell * geom.l_cell


def estimate_energy(trace) -> float:
    """Energy delivered by the drivers (J).

    Accepts a trace, a (volts, amperes, seconds) triple or a sequence of traces.
    """
    if isinstance(trace, ExecutionTrace):
        return trace.energy
    if isinstance(trace, tuple) and len(trace) == 3 and all(np.isscalar(x) for x in trace):
        v, i, t = trace
        return float(v * i * t)
    return float(sum(estimate_energy(t) for t in trace))


def multibit_element_energy(layout: MultiBitLayout, params: PcmCellParams = PcmCellParams(),
                            duration: Optional[float] = None) -> float:
    """Driver energy of one element with every weight bit and the input at 1.

    Parasitic-free: the element's cells feed one crystalline output cell.
    """
    t = params.t_set if duration is None else duration
    V = np.array(layout.cell_scale) * layout.base_voltage
    G = np.full(len(V), params.gc)
    g_in = G.sum()
    v_bl = (G @ V) / (g_in + params.gc)
    cell_i = G * (V - v_bl)
    return float(np.sum(V * cell_i) * t)
