"""Recursive Thevenin reduction of the corner-case word-line ladder.

The corner case drives a single WLT and grounds a single WLB. Each row is
then one rung of a ladder: input cell, the bit-line run between the input
and output columns, and the output cell. Between consecutive rungs the
ladder has one WLT segment and one WLB segment, and the driver end carries
the driver resistance on both lines. Rows are 0-based, row 0 sits next to
the driver and row n_row-1 is the far ("last") row.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .device import PcmCellParams
from .interconnect import LineConfiguration, SubarrayGeometry, line_conductances


@dataclass(frozen=True)
class TheveninEquivalent:
    r_th: float
    v_th: float
    alpha_th: float


def _par(a: float, b: float) -> float:
    if np.isinf(a):
        return b
    if np.isinf(b):
        return a
    return a * b / (a + b)


@dataclass(frozen=True)
class Ladder:
    """Lumped description of the corner-case ladder.

    r_step: WLT plus WLB segment resistance between two adjacent rungs
    r_source: driver resistance on the WLT and WLB ends together
    r_bl: bit-line run inside one rung
    r_in, r_out: input and output cell resistances, one entry per row
    """
    r_step: float
    r_source: float
    r_bl: float
    r_in: np.ndarray
    r_out: np.ndarray

    @property
    def n_row(self) -> int:
        return len(self.r_in)

    def rung(self, i: int) -> float:
        return self.r_in[i] + self.r_bl + self.r_out[i]


def build_ladder(geom: SubarrayGeometry, config: LineConfiguration,
                 params: PcmCellParams = PcmCellParams(), *,
                 bl_segments: Optional[int] = None, ideal_wires: bool = False,
                 input_g=None, output_g=None) -> Ladder:
    """Collect the ladder elements for a geometry.

    bl_segments defaults to n_column. input_g / output_g default to a
    crystalline cell and may be scalars or per-row arrays.
    """
    n = geom.n_row
    sep = geom.n_column if bl_segments is None else bl_segments
    if ideal_wires:
        r_step, r_bl = 0.0, 0.0
    else:
        g = line_conductances(config, geom)
        r_step = 1.0 / g["wlt"] + 1.0 / g["wlb"]
        r_bl = sep / g["bl"]
    gin = params.gc if input_g is None else input_g
    gout = params.gc if output_g is None else output_g
    r_in = np.broadcast_to(1.0 / np.asarray(gin, dtype=float), (n,)).copy()
    r_out = np.broadcast_to(1.0 / np.asarray(gout, dtype=float), (n,)).copy()
    return Ladder(r_step, 2.0 * geom.r_driver, r_bl, r_in, r_out)


def row_resistance(i: int, geom: SubarrayGeometry, config: LineConfiguration,
                   params: PcmCellParams = PcmCellParams(), output_states=None, *,
                   bl_segments: Optional[int] = None, ideal_wires: bool = False) -> float:
    """Series resistance of row i: input cell, bit-line run and output cell.

    ``output_states`` is the output cell conductance, scalar or per row.
    """
    if not 0 <= i < geom.n_row:
        raise IndexError(f"row {i} outside 0..{geom.n_row - 1}")
    lad = build_ladder(geom, config, params, bl_segments=bl_segments,
                       ideal_wires=ideal_wires, output_g=output_states)
    return lad.rung(i)


def ladder_thevenin_resistance(lad: Ladder) -> float:
    # forward pass from the driver: R <- rung_i || (R + step)
    r = lad.r_source
    for i in range(lad.n_row - 1):
        r = _par(lad.rung(i), r + lad.r_step)
    return float(lad.r_step + lad.r_bl + r)


def ladder_alpha(lad: Ladder) -> float:
    n = lad.n_row
    if n == 1:
        return 1.0
    # backward pass: equivalent resistance seen forward from each loaded junction
    rp = np.empty(n - 1)
    rp[n - 2] = lad.rung(n - 2)
    for j in range(n - 2, 0, -1):
        rp[j - 1] = _par(lad.rung(j - 1), rp[j] + lad.r_step)
    # forward pass: divider chain from the source to the last loaded junction
    a = rp[0] / (rp[0] + lad.r_step + lad.r_source)
    for j in range(1, n - 1):
        a *= rp[j] / (lad.r_step + rp[j])
    return float(a)


def thevenin_resistance(geom, config, params=PcmCellParams(), **kw) -> float:
    return ladder_thevenin_resistance(build_ladder(geom, config, params, **kw))


def thevenin_voltage(geom, config, params=PcmCellParams(), v_dd: float = 1.0, **kw):
    """(v_th, alpha_th) at the last row for a driver voltage v_dd."""
    if not v_dd > 0:
        raise ValueError("v_dd must be positive")
    a = ladder_alpha(build_ladder(geom, config, params, **kw))
    return a * v_dd, a


def thevenin_equivalent(geom, config, params=PcmCellParams(), v_dd: float = 1.0,
                        **kw) -> TheveninEquivalent:
    lad = build_ladder(geom, config, params, **kw)
    a = ladder_alpha(lad)
    return TheveninEquivalent(ladder_thevenin_resistance(lad), a * v_dd, a)


def ladder_row_profile(lad: Ladder):
    """Thevenin pair seen by every rung with all other rungs in place.

    Returns ``(alpha, r_th)`` arrays of length n_row. Entry n_row-1 is the
    last-row equivalent; other entries also account for the rungs beyond.
    """
    n = lad.n_row
    # upstream Thevenin (source voltage, resistance) arriving at each junction
    up_v = np.empty(n)
    up_r = np.empty(n)
    v, r = 1.0, lad.r_source + lad.r_step
    for i in range(n):
        up_v[i], up_r[i] = v, r
        rung = lad.rung(i)
        if np.isfinite(rung):  # an open rung (unused row) loads nothing
            v = v * rung / (rung + r)
        r = _par(rung, r) + lad.r_step
    # downstream load seen from each junction, excluding its own rung
    down = np.empty(n)
    b = np.inf
    for i in range(n - 1, -1, -1):
        down[i] = b
        b = lad.r_step + _par(lad.rung(i), b)
    alpha = up_v.copy()
    fin = np.isfinite(down)
    alpha[fin] = up_v[fin] * down[fin] / (up_r[fin] + down[fin])
    r_port = np.array([_par(up_r[i], down[i]) for i in range(n)])
    return alpha, r_port + lad.r_bl


def row_profile(geom, config, params=PcmCellParams(), **kw):
    return ladder_row_profile(build_ladder(geom, config, params, **kw))


def voltage_drop_estimate(n_row: int, i_row: float, g_y: float) -> float:
    """Worst-case cumulative word-line drop with every row drawing i_row."""
    if n_row < 1 or i_row < 0 or not g_y > 0:
        raise ValueError("need n_row >= 1, i_row >= 0, g_y > 0")
    return n_row * (n_row + 1) * i_row / (2.0 * g_y)
