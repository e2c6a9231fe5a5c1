"""Supply-voltage windows and noise margin.

Two windows matter for a design. The first row sits next to the driver and
sees the ideal window; the last row sees the driver through the Thevenin
pair of the ladder. A supply inside both windows is safe for every row.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional, Sequence, Union

from .device import PcmCellParams
from .interconnect import GeometryError, LineConfiguration, SubarrayGeometry
from .thevenin import thevenin_equivalent


@dataclass(frozen=True)
class VoltageWindow:
    v_lo: float
    v_hi: float

    @property
    def empty(self) -> bool:
        return not (self.v_lo <= self.v_hi)

    @property
    def mid(self) -> float:
        return 0.5 * (self.v_lo + self.v_hi)

    def contains(self, v: float) -> bool:
        return self.v_lo <= v <= self.v_hi

    def to_dict(self) -> dict:
        return {"v_lo": self.v_lo, "v_hi": self.v_hi, "empty": self.empty}


EMPTY = VoltageWindow(math.inf, -math.inf)


def set_range(n_x: int, params: PcmCellParams = PcmCellParams()) -> VoltageWindow:
    """Supplies for which n_x+1 active inputs SET without RESETting the output."""
    if n_x < 0:
        raise ValueError("n_x must be >= 0")
    k = (n_x + 2) / (n_x + 1)
    return VoltageWindow(k * params.i_set / params.gc, k * params.i_reset / params.gc)


def false_set_limit(n_x: int, params: PcmCellParams = PcmCellParams()) -> float:
    """Largest supply at which n_x+1 amorphous inputs still leave the output alone."""
    if n_x < 0:
        raise ValueError("n_x must be >= 0")
    ga_sum = (n_x + 1) * params.ga
    return (ga_sum + params.gc) / (ga_sum * params.gc) * params.i_set


def ideal_window(n_x: int, params: PcmCellParams = PcmCellParams()) -> VoltageWindow:
    r1 = set_range(n_x, params)
    return VoltageWindow(r1.v_lo, min(r1.v_hi, false_set_limit(n_x, params)))


def window_from_thevenin(alpha_th: float, r_th: float,
                         params: PcmCellParams = PcmCellParams()) -> VoltageWindow:
    """Last-row window for a single crystalline input and the output cell."""
    if not alpha_th > 0:
        return EMPTY
    r_set = r_th + 2.0 / params.gc
    v_lo = params.i_set * r_set / alpha_th
    v_hi = min(params.i_reset * r_set / alpha_th,
               params.i_set * (r_th + 1.0 / params.ga + 1.0 / params.gc) / alpha_th)
    return VoltageWindow(v_lo, v_hi)


def last_row_window(geom: SubarrayGeometry, config: LineConfiguration,
                    params: PcmCellParams = PcmCellParams(), **kw) -> VoltageWindow:
    th = thevenin_equivalent(geom, config, params, **kw)
    return window_from_thevenin(th.alpha_th, th.r_th, params)


def nm_of(v_lo: float, v_hi: float) -> float:
    """Window width over its midpoint."""
    return (v_hi - v_lo) / (0.5 * (v_hi + v_lo))


@dataclass(frozen=True)
class NoiseMarginReport:
    window_first_row: VoltageWindow
    window_last_row: VoltageWindow
    combined: VoltageWindow
    nm: float
    v_mid: float
    alpha_th: float
    r_th: float
    n_inputs: int = 1

    @property
    def feasible(self) -> bool:
        return self.nm >= 0

    def to_dict(self) -> dict:
        return {
            "window_first_row": self.window_first_row.to_dict(),
            "window_last_row": self.window_last_row.to_dict(),
            "combined": self.combined.to_dict(),
            "nm": self.nm, "v_mid": self.v_mid, "alpha_th": self.alpha_th,
            "r_th": self.r_th, "n_inputs": self.n_inputs, "feasible": self.feasible,
        }


def _resolve_inputs(n_inputs, geom) -> int:
    if n_inputs in ("row", "full"):
        return geom.n_column
    n = int(n_inputs)
    if n < 1:
        raise ValueError("n_inputs must be >= 1")
    return n


def noise_margin(geom: SubarrayGeometry, config: LineConfiguration,
                 params: PcmCellParams = PcmCellParams(), n_inputs: Union[int, str] = 1,
                 **kw) -> NoiseMarginReport:
    """Noise margin of a design.

    The lower end of the window comes from the last row with one driven
    input. ``n_inputs`` sets how many simultaneously driven inputs the upper
    end has to tolerate in the first row: 1 (default) is the single-input
    corner, ``"row"`` uses every column of the subarray.
    """
    n = _resolve_inputs(n_inputs, geom)
    th = thevenin_equivalent(geom, config, params, **kw)
    first = ideal_window(n - 1, params)
    last = window_from_thevenin(th.alpha_th, th.r_th, params)
    if last.empty and not math.isfinite(last.v_lo):
        combined = EMPTY
        nm, v_mid = -2.0, math.inf
    else:
        combined = VoltageWindow(max(last.v_lo, first.v_lo), first.v_hi)
        nm = nm_of(combined.v_lo, combined.v_hi)
        v_mid = combined.mid
    return NoiseMarginReport(first, last, combined, nm, v_mid, th.alpha_th, th.r_th, n)


class Region(enum.Enum):
    ACCEPTABLE = "acceptable"
    UNACCEPTABLE = "unacceptable"


def classify_region(alpha_th: float, r_th: float, params: PcmCellParams = PcmCellParams(),
                    n_x: int = 0) -> Region:
    last = window_from_thevenin(alpha_th, r_th, params)
    if not math.isfinite(last.v_lo):
        return Region.UNACCEPTABLE
    v_max = ideal_window(n_x, params).v_hi
    return Region.ACCEPTABLE if nm_of(last.v_lo, v_max) >= 0 else Region.UNACCEPTABLE


SWEEP_AXES = ("n_row", "n_column", "l_cell", "w_cell")

# Standard trend grids: axis, values (lengths as multiples of l_min / w_min)
# and the fixed (n_row, n_column, l_cell/l_min, w_cell/w_min) of the base point.
TREND_GRIDS = {
    "rows": ("n_row", (64, 128, 256, 512, 1024, 2048), (None, 128, 4, 1)),
    "length": ("l_cell", (1, 2, 3, 4, 5, 6, 7, 8), (128, 128, None, 1)),
    "width": ("w_cell", (1, 2, 3, 4, 5, 6, 7, 8), (64, 128, 4, None)),
    "cols": ("n_column", (128, 256, 512, 1024), (256, None, 4, 1)),
}


def trend_grid(name: str, config: LineConfiguration, r_driver: Optional[float] = None):
    """(axis, values, base geometry) of a standard trend grid for one configuration."""
    from .interconnect import DEFAULT_R_DRIVER, min_cell_pitch
    axis, vals, (rows, cols, lm, wm) = TREND_GRIDS[name]
    w_min, l_min = min_cell_pitch(config)
    base = SubarrayGeometry(rows or vals[0], cols or vals[0], (wm or vals[0]) * w_min,
                            (lm or vals[0]) * l_min,
                            DEFAULT_R_DRIVER if r_driver is None else r_driver)
    if axis == "l_cell":
        vals = tuple(v * l_min for v in vals)
    elif axis == "w_cell":
        vals = tuple(v * w_min for v in vals)
    return axis, list(vals), base
CSV_COLUMNS = ("config", "axis", "value", "n_row", "n_column", "w_cell", "l_cell", "r_driver",
               "v_min_last", "v_max", "v_mid", "nm", "alpha_th", "r_th", "feasible", "note")


def sweep(axis: str, values: Sequence, base: SubarrayGeometry, config: LineConfiguration,
          params: PcmCellParams = PcmCellParams(), **kw) -> List[dict]:
    """One record per value of ``axis``; infeasible geometries become note-only rows."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    if len(values) == 0:
        raise ValueError("empty sweep grid")
    out = []
    for v in values:
        v = int(v) if axis in ("n_row", "n_column") else float(v)
        rec = {"config": config.name, "axis": axis, "value": v}
        try:
            geom = base.resized(**{axis: v})
            rep = noise_margin(geom, config, params, **kw)
        except GeometryError as exc:
            warnings.warn(f"skipping {axis}={v}: {exc}")
            rec.update({c: None for c in CSV_COLUMNS if c not in rec})
            rec.update(feasible=False, note=f"skipped: {exc}")
            out.append(rec)
            continue
        rec.update(n_row=geom.n_row, n_column=geom.n_column, w_cell=geom.w_cell,
                   l_cell=geom.l_cell, r_driver=geom.r_driver,
                   v_min_last=rep.combined.v_lo, v_max=rep.combined.v_hi, v_mid=rep.v_mid,
                   nm=rep.nm, alpha_th=rep.alpha_th, r_th=rep.r_th,
                   feasible=rep.feasible, note="")
        out.append(rec)
    return out


def records_to_csv(records: Iterable[dict], columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore",
                       lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow({k: _fmt(r.get(k)) for k in columns})
    return buf.getvalue()


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return x


def records_to_json(records: Iterable[dict]) -> str:
    return json.dumps(list(records), indent=2, sort_keys=True) + "\n"
