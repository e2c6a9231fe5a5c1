"""PCM storage cell and OTS selector models.

The cell is a two-state conductance. Writes are abstracted to a threshold
rule: a pulse changes the phase only if its current and its duration both
reach the corresponding SET or RESET requirement.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

# relative slack used for threshold comparisons, so that a current computed
# as 49.99999999999 uA by a solver still counts as reaching 50 uA
_REL_TOL = 1e-12


class CellState(enum.IntEnum):
    AMORPHOUS = 0
    CRYSTALLINE = 1

    @property
    def bit(self) -> int:
        return int(self)


class PulseEvent(enum.Enum):
    NONE = "none"
    SET = "set"
    RESET = "reset"


@dataclass(frozen=True)
class PcmCellParams:
    g_amorphous: float = 660e-9
    g_crystalline: float = 160e-6
    i_set: float = 50e-6
    i_reset: float = 100e-6
    t_set: float = 80e-9
    t_reset: float = 15e-9

    def __post_init__(self):
        if not 0 < self.g_amorphous < self.g_crystalline:
            raise ValueError("need 0 < g_amorphous < g_crystalline")
        if not 0 < self.i_set < self.i_reset:
            raise ValueError("need 0 < i_set < i_reset")
        if not self.t_set > self.t_reset > 0:
            raise ValueError("need t_set > t_reset > 0")

    # short aliases, used all over the analytical code
    @property
    def ga(self) -> float:
        return self.g_amorphous

    @property
    def gc(self) -> float:
        return self.g_crystalline


@dataclass(frozen=True)
class OtsParams:
    v_threshold: float = 0.3
    g_on: float = 10.0
    g_off: float = 100e-9

    def __post_init__(self):
        if self.v_threshold <= 0:
            raise ValueError("v_threshold must be positive")
        if not 0 < self.g_off < self.g_on:
            raise ValueError("need 0 < g_off < g_on")


def cell_conductance(state, params: PcmCellParams = PcmCellParams()) -> float:
    """Conductance of a cell in the given phase."""
    return params.g_crystalline if CellState(state) == CellState.CRYSTALLINE else params.g_amorphous


def reaches(value: float, threshold: float) -> bool:
    """value >= threshold, tolerant to round-off at the boundary."""
    return value >= threshold * (1.0 - _REL_TOL)


def pulse_outcome(state, current: float, duration: float,
                  params: PcmCellParams = PcmCellParams()):
    """Apply one current pulse to a cell.

    Returns ``(new_state, event)``. RESET takes priority over SET because a
    pulse strong enough to melt the cell amorphizes it regardless of how long
    it lasts past t_reset.
    """
    if current < 0:
        raise ValueError(f"negative current {current!r}")
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration!r}")
    state = CellState(state)
    if reaches(current, params.i_reset) and reaches(duration, params.t_reset):
        return CellState.AMORPHOUS, PulseEvent.RESET
    if reaches(current, params.i_set) and reaches(duration, params.t_set):
        return CellState.CRYSTALLINE, PulseEvent.SET
    return state, PulseEvent.NONE


def ots_conductance(v_across: float, params: OtsParams = OtsParams()) -> float:
    # strictly above threshold turns the selector on
    return params.g_on if abs(v_across) > params.v_threshold else params.g_off
