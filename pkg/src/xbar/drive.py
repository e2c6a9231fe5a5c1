"""Line drive patterns for one subarray step."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# bit-line status codes
BL_ACTIVE = 0
BL_FLOAT = 1
BL_GROUND = 2


@dataclass
class DrivePattern:
    """Voltage assignment for every line of a subarray.

    wlt_scale[i] is the multiple of v_dd applied to WLT i, NaN when the line
    floats (binary inputs use 1.0; the area-efficient multi-bit scheme uses
    powers of two). wlb_ground[j] grounds WLB j, otherwise it floats.
    bl[k] is one of BL_ACTIVE, BL_FLOAT, BL_GROUND.
    """
    wlt_scale: np.ndarray
    wlb_ground: np.ndarray
    bl: np.ndarray
    v_dd: float
    duration: float = 80e-9

    def __post_init__(self):
        self.wlt_scale = np.asarray(self.wlt_scale, dtype=float)
        self.wlb_ground = np.asarray(self.wlb_ground, dtype=bool)
        self.bl = np.asarray(self.bl, dtype=int)
        if self.v_dd < 0:
            raise ValueError("v_dd must be non-negative")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        ok = self.wlt_scale[~np.isnan(self.wlt_scale)]
        if np.any(ok < 0):
            raise ValueError("negative WLT scale")
        if not np.all(np.isin(self.bl, (BL_ACTIVE, BL_FLOAT, BL_GROUND))):
            raise ValueError("bad bit-line status code")

    @property
    def n_column(self) -> int:
        return len(self.wlt_scale)

    @property
    def n_row(self) -> int:
        return len(self.bl)

    @property
    def driven(self) -> np.ndarray:
        return ~np.isnan(self.wlt_scale)

    def wlt_volts(self) -> np.ndarray:
        return self.wlt_scale * self.v_dd

    def output_columns(self) -> np.ndarray:
        return np.flatnonzero(self.wlb_ground)

    def with_vdd(self, v_dd: float) -> "DrivePattern":
        return DrivePattern(self.wlt_scale.copy(), self.wlb_ground.copy(), self.bl.copy(),
                            v_dd, self.duration)

    @classmethod
    def from_inputs(cls, inputs: Sequence, n_row: int, output_column: int, v_dd: float,
                    n_column: Optional[int] = None, duration: float = 80e-9,
                    scales: Optional[Sequence[float]] = None,
                    rows: Optional[Sequence[int]] = None) -> "DrivePattern":
        """Binary input vector -> drive: logic 1 drives the WLT, logic 0 floats it.

        Inputs occupy the first len(inputs) columns. ``rows`` restricts the
        active bit lines (others float); all rows are active by default.
        """
        inputs = np.asarray(inputs).astype(bool)
        n_column = len(inputs) if n_column is None else n_column
        if len(inputs) > n_column or not 0 <= output_column < n_column:
            raise ValueError("inputs / output column do not fit the subarray")
        wlt = np.full(n_column, np.nan)
        sc = np.ones(len(inputs)) if scales is None else np.asarray(scales, dtype=float)
        wlt[: len(inputs)] = np.where(inputs, sc, np.nan)
        wlb = np.zeros(n_column, dtype=bool)
        wlb[output_column] = True
        if rows is None:
            bl = np.full(n_row, BL_ACTIVE)
        else:
            bl = np.full(n_row, BL_FLOAT)
            bl[np.asarray(rows, dtype=int)] = BL_ACTIVE
        return cls(wlt, wlb, bl, v_dd, duration)

    @classmethod
    def corner_case(cls, n_row: int, n_column: int, v_dd: float,
                    duration: float = 80e-9) -> "DrivePattern":
        """Only WLT 0 driven, output on the farthest column, every BL active."""
        wlt = np.full(n_column, np.nan)
        wlt[0] = 1.0
        wlb = np.zeros(n_column, dtype=bool)
        wlb[n_column - 1] = True
        return cls(wlt, wlb, np.full(n_row, BL_ACTIVE), v_dd, duration)

    def to_dict(self) -> dict:
        return {
            "wlt_scale": [None if np.isnan(x) else float(x) for x in self.wlt_scale],
            "wlb_ground": [bool(x) for x in self.wlb_ground],
            "bl": [int(x) for x in self.bl],
            "v_dd": float(self.v_dd),
            "duration": float(self.duration),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DrivePattern":
        wlt = [np.nan if x is None else x for x in d["wlt_scale"]]
        return cls(np.array(wlt, dtype=float), d["wlb_ground"], d["bl"], d["v_dd"],
                   d.get("duration", 80e-9))
